#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "canids/text/tokenizer.hpp"

namespace canids::model {

struct ModelConfig {
  text::Arch arch = text::Arch::Encoder;
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t vocab_size = 26;
  std::size_t max_len = text::kDefaultMaxLen;
  std::size_t n_classes = 5;
  std::size_t head_hidden = 0;  // 0 means d_model
  double dropout = 0.0;
  double norm_eps = 1e-5;
  double rope_base = 10000.0;
  double init_std = 0.02;
  std::uint64_t seed = 0;
  text::TextOptions text;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t kv_dim() const { return n_kv_heads * head_dim(); }
  std::size_t ffn_hidden() const { return ffn_mult * d_model; }
  std::size_t head_width() const { return head_hidden == 0 ? d_model : head_hidden; }

  void validate() const;

  // Ordered `key=value` pairs; parse_kv accepts exactly these keys.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  // Applies one key; returns false when the key is not a model key.
  bool apply(const std::string& key, const std::string& value);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Closed-form parameter count for a plain (adapter-free) model.
std::size_t expected_param_count(const ModelConfig& config);

}  // namespace canids::model
