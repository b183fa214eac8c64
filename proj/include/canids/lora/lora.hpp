#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "canids/lora/adapter.hpp"
#include "canids/model/transformer.hpp"

namespace canids::lora {

// Default targets: every attention projection and FFN affine.
inline const std::vector<std::string> kDefaultTargets = {"layers.*.attn.*", "layers.*.ffn.*"};

struct LoraConfig {
  std::vector<std::string> targets = kDefaultTargets;  // globs over linear names; '*' and '?'
  std::size_t rank = kDefaultRank;
  double alpha = kDefaultAlpha;
  double dropout = kDefaultDropout;
  std::uint64_t seed = 0;
};

bool glob_match(std::string_view pattern, std::string_view name);

// Attaches adapters to every matching linear (the classifier head is never a
// target) and freezes all other non-head tensors. Returns adapted layer names.
std::vector<std::string> attach_adapters(model::TransformerModel& model, const LoraConfig& config);

// Plain model with W0 + (alpha/r) U V folded into each adapted weight.
model::TransformerModel merge_adapters(const model::TransformerModel& model);

struct TrainableCount {
  std::size_t trainable = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};
TrainableCount count_trainable(const model::TransformerModel& model);
TrainableCount fraction_of(std::size_t trainable, std::size_t total);

// Adapter-only file: adapter factors and the classifier head, bound to the
// fingerprint of the base checkpoint they were trained on.
std::string serialize_adapters(const model::TransformerModel& adapted, std::uint64_t base_fingerprint);
model::TransformerModel apply_adapters(const model::TransformerModel& base, std::string_view bytes);
void save_adapters(const model::TransformerModel& adapted, std::uint64_t base_fingerprint,
                   const std::filesystem::path& path);
model::TransformerModel load_adapters(const model::TransformerModel& base, const std::filesystem::path& path);

}  // namespace canids::lora
