#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "canids/data/dataset.hpp"
#include "canids/lora/lora.hpp"
#include "canids/model/config.hpp"
#include "canids/train/train.hpp"
#include "canids/util/kvconfig.hpp"

namespace canids::cli {

// Everything one experiment needs, read from a flat key=value file (see
// docs/run_config.md). Unknown keys are rejected.
struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  data::SplitConfig split;
  lora::LoraConfig lora;
  bool use_lora = false;
  bool reinit_head = true;  // fresh classifier head when fine-tuning from a base
  std::string data_dir;         // split output directory (train/, validation/)
  std::string base_checkpoint;  // required with use_lora
  bool write_svg = true;

  // `seed` fans out to the model, train, split and lora seeds; `arch` also
  // resets the arch-specific train defaults, so it is applied before the rest.
  static RunConfig from_entries(const std::vector<KvEntry>& entries);
  void apply(const std::string& key, const std::string& value);

  std::string to_text() const;  // every key with its effective value
};

}  // namespace canids::cli
