#include "canids/cli/run_config.hpp"

#include <cstdio>

namespace canids::cli {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

}  // namespace

RunConfig RunConfig::from_entries(const std::vector<KvEntry>& entries) {
  RunConfig c;
  // Arch decides the train defaults, so the last arch entry goes first.
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->key == "arch") {
      try {
        c.model.arch = text::arch_from_name(it->value);
      } catch (const std::exception& e) {
        throw ConfigError(it->origin + ": " + e.what());
      }
      break;
    }
  }
  c.train = train::TrainConfig::defaults_for(c.model.arch);
  for (const auto& e : entries) {
    try {
      c.apply(e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(e.origin + ": " + err.what());
    } catch (const std::exception& err) {
      throw ConfigError(e.origin + ": " + e.key + ": " + err.what());
    }
  }
  return c;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "seed") {
    const auto s = static_cast<std::uint64_t>(parse_int(value, key));
    model.seed = train.seed = split.seed = lora.seed = s;
    return;
  }
  if (model.apply(key, value) || train.apply(key, value)) return;
  if (key == "train_fraction") split.train_fraction = parse_double(value, key);
  else if (key == "subsample_p") split.subsample_p = parse_double(value, key);
  else if (key == "normal_ratio") split.normal_ratio = parse_double(value, key);
  else if (key == "inner_train_fraction") split.inner_train_fraction = parse_double(value, key);
  else if (key == "split_seed") split.seed = static_cast<std::uint64_t>(parse_int(value, key));
  else if (key == "lora") use_lora = parse_bool(value, key);
  else if (key == "lora_rank") {
    const long long r = parse_int(value, key);
    if (r < 1) throw ConfigError("lora_rank must be >= 1");
    lora.rank = static_cast<std::size_t>(r);
  } else if (key == "lora_alpha") lora.alpha = parse_double(value, key);
  else if (key == "lora_dropout") lora.dropout = parse_double(value, key);
  else if (key == "lora_targets") {
    lora.targets = split_list(value);
    if (lora.targets.empty()) throw ConfigError("lora_targets must not be empty");
  } else if (key == "lora_seed") lora.seed = static_cast<std::uint64_t>(parse_int(value, key));
  else if (key == "reinit_head") reinit_head = parse_bool(value, key);
  else if (key == "data_dir") data_dir = value;
  else if (key == "base_checkpoint") base_checkpoint = value;
  else if (key == "write_svg") write_svg = parse_bool(value, key);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::string out = "# model\n";
  for (const auto& [k, v] : model.to_kv()) out += k + " = " + v + "\n";
  out += "# training\n";
  for (const auto& [k, v] : train.to_kv()) out += k + " = " + v + "\n";
  out += "# split\n";
  out += "train_fraction = " + fmt(split.train_fraction) + "\n";
  out += "subsample_p = " + fmt(split.subsample_p) + "\n";
  out += "normal_ratio = " + fmt(split.normal_ratio) + "\n";
  out += "inner_train_fraction = " + fmt(split.inner_train_fraction) + "\n";
  out += "split_seed = " + std::to_string(split.seed) + "\n";
  out += "# lora\n";
  out += std::string("lora = ") + (use_lora ? "true" : "false") + "\n";
  out += "lora_rank = " + std::to_string(lora.rank) + "\n";
  out += "lora_alpha = " + fmt(lora.alpha) + "\n";
  out += "lora_dropout = " + fmt(lora.dropout) + "\n";
  out += "lora_targets = " + join(lora.targets) + "\n";
  out += "lora_seed = " + std::to_string(lora.seed) + "\n";
  out += std::string("reinit_head = ") + (reinit_head ? "true" : "false") + "\n";
  out += "# paths\n";
  out += "data_dir = " + data_dir + "\n";
  out += "base_checkpoint = " + base_checkpoint + "\n";
  out += std::string("write_svg = ") + (write_svg ? "true" : "false") + "\n";
  return out;
}

}  // namespace canids::cli
