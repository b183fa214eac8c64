#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "canids/can/frame.hpp"
#include "canids/model/config.hpp"
#include "canids/nn/layers.hpp"
#include "canids/text/tokenizer.hpp"

namespace canids::model {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Block {
  nn::Linear q, k, v, o;
  // Encoder: post-attention and post-FFN layer norms. Decoder: RMS pre-norms.
  nn::Norm norm1, norm2;
  nn::FeedForward ffn;
};

struct Prediction {
  can::AttackClass label = can::AttackClass::Normal;
  std::vector<double> probabilities;
};

// Highest probability wins; ties go to the lowest class index.
std::size_t argmax(std::span<const double> probs);

// Rows of the stacked batch matrix owned by one sequence.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
  std::size_t pool = 0;  // pooling position within the sequence
};

// Query rows a block computes outputs for: every row, or only pooled rows in
// the last block (the classifier never reads the others).
struct QuerySet {
  std::vector<std::size_t> rows;       // stacked row per query
  std::vector<std::size_t> positions;  // sequence position per query
  std::vector<std::size_t> start;      // first query of each sequence
  std::vector<std::size_t> count;      // queries per sequence
};

struct BlockTape {
  QuerySet queries;
  nn::LinearCache cq, ck, cv, co;
  nn::NormCache n1, n2;
  nn::FfnCache ffn;
  nn::Mat q, k, v;
  std::vector<nn::AttentionCache> attn;
  nn::Mat drop_attn, drop_ffn;  // scaled keep masks; empty without dropout
};

// Forward activations kept for the backward pass.
struct Tape {
  std::vector<Segment> segments;
  std::vector<text::TokenId> ids;
  std::vector<std::size_t> positions;
  nn::NormCache embed_norm;
  std::vector<BlockTape> blocks;
  nn::NormCache final_norm;
  nn::LinearCache head1, head2;
  nn::Mat head_pre;
};

// Encoder (learned positions, post-norm, GELU MLP, [CLS] pooling, tanh head)
// or decoder (RoPE, RMS pre-norm, SwiGLU, causal mask, [EOS] pooling, SiLU
// head) sequence classifier. Plain value type: copies are independent models.
class TransformerModel {
 public:
  explicit TransformerModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const text::Tokenizer& tokenizer() const { return tokenizer_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  // Pooled hidden state per sequence (n x d_model). Padding never enters the
  // computation: each sequence is processed over its real prefix only.
  nn::Mat forward(std::span<const text::TokenSequence> batch,
                  const nn::ForwardContext& ctx = nn::ForwardContext::eval()) const;
  nn::Mat logits(nn::ConstRef pooled, const nn::ForwardContext& ctx = nn::ForwardContext::eval()) const;
  // softmax(W_out act(W_h Z + b_h) + b_out) per row.
  nn::Mat classify(nn::ConstRef pooled) const;

  // Training path: logits plus the tape needed by backward().
  nn::Mat forward_train(std::span<const text::TokenSequence> batch, const nn::ForwardContext& ctx,
                        Tape& tape) const;
  // Accumulates d(loss)/d(params) into the store's grad buffers.
  void backward(const Tape& tape, nn::ConstRef dlogits);

  Prediction predict(const can::CanFrame& frame) const;
  std::vector<Prediction> predict_batch(std::span<const text::TokenSequence> batch) const;

  // Every affine layer in a fixed order, named like "layers.0.attn.q" or "head.out".
  std::vector<nn::Linear*> linears();
  std::vector<const nn::Linear*> linears() const;
  nn::Linear& linear(const std::string& name);

  static bool is_head_param(const std::string& name) { return name.starts_with("head."); }
  void reinit_head(std::uint64_t seed);

 private:
  ModelConfig config_;
  text::Tokenizer tokenizer_;
  nn::ParamStore store_;
  nn::ParamId tokens_ = 0;
  std::optional<nn::ParamId> positions_;
  std::optional<nn::Norm> embed_norm_;
  std::optional<nn::Norm> final_norm_;
  std::vector<Block> blocks_;
  nn::Linear head_hidden_;
  nn::Linear head_out_;

  nn::Mat run(std::span<const text::TokenSequence> batch, const nn::ForwardContext& ctx, Tape* tape) const;
  nn::Mat head_forward(nn::ConstRef pooled, const nn::ForwardContext& ctx, Tape* tape) const;
};

}  // namespace canids::model
