#include "canids/model/config.hpp"

#include <cstdio>
#include <stdexcept>

#include "canids/util/kvconfig.hpp"

namespace canids::model {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (d_model < 2) fail("d_model must be >= 2");
  if (n_heads < 1 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (n_kv_heads < 1 || n_heads % n_kv_heads != 0) fail("n_kv_heads must divide n_heads");
  if (arch == text::Arch::Decoder && head_dim() % 2 != 0) fail("rotary embeddings need an even head dimension");
  if (ffn_mult < 1) fail("ffn_mult must be >= 1");
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (max_len < 3) fail("max_len must be >= 3");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(norm_eps >= 0.0)) fail("norm_eps must be >= 0");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_kv() const {
  return {
      {"arch", std::string(text::arch_name(arch))},
      {"n_layers", std::to_string(n_layers)},
      {"d_model", std::to_string(d_model)},
      {"n_heads", std::to_string(n_heads)},
      {"n_kv_heads", std::to_string(n_kv_heads)},
      {"ffn_mult", std::to_string(ffn_mult)},
      {"vocab_size", std::to_string(vocab_size)},
      {"max_len", std::to_string(max_len)},
      {"n_classes", std::to_string(n_classes)},
      {"head_hidden", std::to_string(head_hidden)},
      {"dropout", fmt_double(dropout)},
      {"norm_eps", fmt_double(norm_eps)},
      {"rope_base", fmt_double(rope_base)},
      {"init_std", fmt_double(init_std)},
      {"seed", std::to_string(seed)},
      {"include_dlc", text.include_dlc ? "true" : "false"},
      {"include_timestamp", text.include_timestamp ? "true" : "false"},
  };
}

bool ModelConfig::apply(const std::string& key, const std::string& value) {
  auto size = [&](std::size_t& out) {
    const long long v = parse_int(value, key);
    if (v < 0) throw ConfigError(key + ": must be >= 0");
    out = static_cast<std::size_t>(v);
  };
  if (key == "arch") arch = text::arch_from_name(value);
  else if (key == "n_layers") size(n_layers);
  else if (key == "d_model") size(d_model);
  else if (key == "n_heads") size(n_heads);
  else if (key == "n_kv_heads") size(n_kv_heads);
  else if (key == "ffn_mult") size(ffn_mult);
  else if (key == "vocab_size") size(vocab_size);
  else if (key == "max_len") size(max_len);
  else if (key == "n_classes") size(n_classes);
  else if (key == "head_hidden") size(head_hidden);
  else if (key == "dropout") dropout = parse_double(value, key);
  else if (key == "norm_eps") norm_eps = parse_double(value, key);
  else if (key == "rope_base") rope_base = parse_double(value, key);
  else if (key == "init_std") init_std = parse_double(value, key);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(value, key));
  else if (key == "include_dlc") text.include_dlc = parse_bool(value, key);
  else if (key == "include_timestamp") text.include_timestamp = parse_bool(value, key);
  else return false;
  return true;
}

std::size_t expected_param_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, h = c.ffn_hidden(), kv = c.kv_dim(), hh = c.head_width();
  std::size_t n = c.vocab_size * d;
  std::size_t per_layer = 0;
  if (c.arch == text::Arch::Encoder) {
    n += c.max_len * d + 2 * d;                              // positions + embedding layer norm
    per_layer += (d * d + d) * 2 + (d * kv + kv) * 2;        // q, o and k, v with biases
    per_layer += 2 * (2 * d);                                // two layer norms
    per_layer += d * h + h + h * d + d;                      // gelu mlp
  } else {
    n += d;                                                  // final rms norm
    per_layer += d * d * 2 + d * kv * 2;                     // bias-free projections
    per_layer += 2 * d;                                      // two rms norms
    per_layer += 3 * d * h;                                  // swiglu
  }
  n += c.n_layers * per_layer;
  n += d * hh + hh + hh * c.n_classes + c.n_classes;         // classifier head
  return n;
}

}  // namespace canids::model
