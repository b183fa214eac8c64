#pragma once

#include <optional>
#include <string>

#include "canids/lora/adapter.hpp"
#include "canids/nn/context.hpp"
#include "canids/nn/ops.hpp"

namespace canids::nn {

// Affine layer bound to parameters in a ParamStore, optionally carrying a
// low-rank adapter.
struct Linear {
  std::string name;
  ParamId weight = 0;
  std::optional<ParamId> bias;
  std::size_t in = 0;
  std::size_t out = 0;
  std::optional<lora::LoraAdapter> adapter;
};

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   bool with_bias, Rng& rng, double init_std);

// Adds "<name>.lora_up" (U, zeros) and "<name>.lora_down" (V, N(0, 0.02))
// to the store and attaches them. Throws lora::LoraError when the layer is
// already adapted or the rank is outside [1, min(in, out)].
void attach_adapter(ParamStore& store, Linear& layer, std::size_t rank, double alpha, double dropout,
                    Rng& rng);

struct LinearCache {
  Mat input;
  lora::AdapterCache adapter;
};

Mat linear_forward(const ParamStore& store, const Linear& layer, ConstRef x,
                   const ForwardContext& ctx, LinearCache* cache = nullptr);
// Accumulates parameter gradients (frozen tensors are skipped) and returns dx.
Mat linear_backward(ParamStore& store, const Linear& layer, const LinearCache& cache, ConstRef dy);

struct Norm {
  NormKind kind = NormKind::LayerNorm;
  ParamId gain = 0;
  std::optional<ParamId> bias;
  double eps = kNormEps;
};

Norm make_norm(ParamStore& store, const std::string& name, std::size_t dim, NormKind kind, double eps);
Mat norm_forward(const ParamStore& store, const Norm& norm, ConstRef x, NormCache* cache = nullptr);
Mat norm_backward(ParamStore& store, const Norm& norm, const NormCache& cache, ConstRef dy);

enum class FfnKind { GeluMlp, SwiGlu };

// gelu_mlp: w2 * gelu(w1 x + b1) + b2
// swiglu:   w2 * (silu(w1 x) * (w3 x))
struct FeedForward {
  FfnKind kind = FfnKind::GeluMlp;
  Linear w1;
  Linear w2;
  std::optional<Linear> w3;
};

FeedForward make_ffn(ParamStore& store, const std::string& name, FfnKind kind, std::size_t dim,
                     std::size_t hidden, Rng& rng, double init_std);

struct FfnCache {
  LinearCache c1, c2, c3;
  Mat pre1;  // w1 x (+ b1)
  Mat pre3;  // w3 x (swiglu only)
};

Mat ffn_forward(const ParamStore& store, const FeedForward& ffn, ConstRef x, const ForwardContext& ctx,
                FfnCache* cache = nullptr);
Mat ffn_backward(ParamStore& store, const FeedForward& ffn, const FfnCache& cache, ConstRef dy);

}  // namespace canids::nn
