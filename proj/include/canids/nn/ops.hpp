#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "canids/nn/tensor.hpp"

namespace canids::nn {

using ConstRef = Eigen::Ref<const Mat>;
using RowVec = Eigen::RowVectorXd;
using ConstRowRef = Eigen::Ref<const RowVec>;

// Row-vector view of a rank-1 parameter.
inline Eigen::Map<const RowVec> row_view(const Tensor& t) {
  return Eigen::Map<const RowVec>(t.data(), static_cast<Eigen::Index>(t.size()));
}
inline Eigen::Map<RowVec> row_view(Tensor& t) {
  return Eigen::Map<RowVec>(t.data(), static_cast<Eigen::Index>(t.size()));
}

// ---- affine: y = x W^T + b, W is (out x in) ----------------------------------

Mat affine(ConstRef x, ConstRef w, const ConstRowRef* bias = nullptr);

struct AffineGrads {
  Mat dx;
  Mat dw;
  RowVec db;
};
AffineGrads affine_backward(ConstRef x, ConstRef w, ConstRef dy);

// ---- softmax over the last axis ------------------------------------------------

Mat softmax(ConstRef logits);
Mat softmax_backward(ConstRef probs, ConstRef dprobs);
double log_sum_exp(ConstRowRef row);

// ---- normalization -------------------------------------------------------------

enum class NormKind { LayerNorm, RmsNorm };
inline constexpr double kNormEps = 1e-5;

struct NormCache {
  Mat xhat;                    // normalized input before gain/bias
  Eigen::VectorXd inv_scale;   // 1/sqrt(var+eps) or 1/rms per row
};

// layer_norm: (x - mean) / sqrt(var + eps) * gain + bias
// rms_norm:   x / sqrt(mean(x^2) + eps) * gain        (bias ignored)
Mat normalize(ConstRef x, NormKind kind, ConstRowRef gain, const ConstRowRef* bias, double eps,
              NormCache* cache = nullptr);

struct NormGrads {
  Mat dx;
  RowVec dgain;
  RowVec dbias;
};
NormGrads normalize_backward(const NormCache& cache, NormKind kind, ConstRowRef gain, ConstRef dy);

// ---- scaled dot-product attention for one sequence ------------------------------

struct AttentionMask {
  bool causal = false;
  // Absolute position of query row 0; query row i sits at query_offset + i.
  std::size_t query_offset = 0;
  // Keys at positions >= key_length are masked (padding).
  std::size_t key_length = std::numeric_limits<std::size_t>::max();
};

struct AttentionCache {
  std::vector<Mat> probs;  // per query head: (n_queries x n_keys)
};

// q: (nq x n_heads*d), k and v: (nk x n_kv_heads*d). Query head h reads kv head
// h / (n_heads / n_kv_heads). Masked scores are -inf before the softmax.
Mat attention(ConstRef q, ConstRef k, ConstRef v, const AttentionMask& mask, int n_heads,
              int n_kv_heads, AttentionCache* cache = nullptr);

struct AttentionGrads {
  Mat dq;
  Mat dk;
  Mat dv;
};
AttentionGrads attention_backward(ConstRef q, ConstRef k, ConstRef v, const AttentionCache& cache,
                                  ConstRef dctx, int n_heads, int n_kv_heads);

// ---- rotary position embedding -------------------------------------------------

inline constexpr double kRopeBase = 10000.0;

// Rotates pairs (2i, 2i+1) by position * base^(-2i/d).
void rope_apply(std::span<double> vec, double position, double base = kRopeBase);
// Applies rope to every head slice of every row; row r uses positions[r].
// inverse=true rotates by the negative angle (the backward pass).
void rope_rows(Eigen::Ref<Mat> x, int n_heads, std::span<const std::size_t> positions,
               double base = kRopeBase, bool inverse = false);

// ---- pointwise activations ------------------------------------------------------

double gelu(double x);
double gelu_grad(double x);
double silu(double x);
double silu_grad(double x);

enum class Activation { Tanh, Silu, Gelu };
Mat activate(ConstRef x, Activation act);
// Gradient through the activation given its pre-activation input.
Mat activate_backward(ConstRef pre, ConstRef dy, Activation act);

}  // namespace canids::nn
