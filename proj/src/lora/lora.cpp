#include "canids/lora/lora.hpp"

#include <cstdio>
#include <sstream>

#include "canids/model/checkpoint.hpp"
#include "canids/util/hash.hpp"
#include "canids/util/kvconfig.hpp"

namespace canids::lora {

using model::CheckpointError;
using model::CheckpointErrorKind;
using model::TransformerModel;

namespace {

constexpr std::string_view kMagic = "CANIDS-ADAPTERS";
constexpr int kVersion = 1;

bool is_adapter_param(const std::string& name) {
  return name.ends_with(".lora_up") || name.ends_with(".lora_down");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> words(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

void freeze_base(TransformerModel& m) {
  for (auto& p : m.params().all())
    p.frozen = !is_adapter_param(p.name) && !TransformerModel::is_head_param(p.name);
}

}  // namespace

bool glob_match(std::string_view pattern, std::string_view name) {
  std::size_t p = 0, n = 0, star = std::string_view::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::vector<std::string> attach_adapters(TransformerModel& model, const LoraConfig& config) {
  std::vector<nn::Linear*> selected;
  for (nn::Linear* l : model.linears()) {
    if (TransformerModel::is_head_param(l->name + ".")) continue;
    for (const auto& t : config.targets)
      if (glob_match(t, l->name)) {
        selected.push_back(l);
        break;
      }
  }
  if (selected.empty()) throw LoraError("lora targets select no affine layer");
  for (nn::Linear* l : selected)
    if (l->adapter) throw LoraError(l->name + " already carries an adapter");
  Rng rng(Rng::derive(config.seed, 0x10ea));
  std::vector<std::string> names;
  for (nn::Linear* l : selected) {
    nn::attach_adapter(model.params(), *l, config.rank, config.alpha, config.dropout, rng);
    names.push_back(l->name);
  }
  freeze_base(model);
  return names;
}

TransformerModel merge_adapters(const TransformerModel& adapted) {
  TransformerModel plain(adapted.config());
  auto& dst = plain.params();
  const auto& src = adapted.params();
  for (const auto& p : src.all()) {
    if (is_adapter_param(p.name)) continue;
    auto& q = dst[dst.find(p.name)];
    q.value = p.value;
    q.frozen = false;
  }
  for (const nn::Linear* l : adapted.linears()) {
    if (!l->adapter) continue;
    const auto& a = *l->adapter;
    auto w = dst[dst.find(l->name + ".weight")].value.mat();
    w.noalias() += a.scale() * (src.value(a.up).mat() * src.value(a.down).mat());
  }
  return plain;
}

TrainableCount fraction_of(std::size_t trainable, std::size_t total) {
  TrainableCount c;
  c.trainable = trainable;
  c.total = total;
  c.fraction = total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
  return c;
}

TrainableCount count_trainable(const TransformerModel& model) {
  return fraction_of(model.params().trainable_count(), model.params().element_count());
}

std::string serialize_adapters(const TransformerModel& adapted, std::uint64_t base_fingerprint) {
  std::string out = std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
  out += "base " + to_hex16(base_fingerprint) + "\n";
  std::vector<const nn::Linear*> layers;
  for (const nn::Linear* l : adapted.linears())
    if (l->adapter) layers.push_back(l);
  out += "adapters " + std::to_string(layers.size()) + "\n";
  for (const nn::Linear* l : layers)
    out += l->name + " " + std::to_string(l->adapter->rank) + " " + fmt_double(l->adapter->alpha) + " " +
           fmt_double(l->adapter->dropout) + "\n";
  std::vector<const nn::Param*> tensors;
  for (const auto& p : adapted.params().all())
    if (is_adapter_param(p.name) || TransformerModel::is_head_param(p.name)) tensors.push_back(&p);
  out += "tensors " + std::to_string(tensors.size()) + "\n";
  for (const nn::Param* p : tensors) {
    out += p->name + " " + std::to_string(p->value.rank());
    for (auto d : p->value.shape()) out += " " + std::to_string(d);
    out += "\n";
  }
  out += "data\n";
  for (const nn::Param* p : tensors) model::detail::append_doubles_le(out, p->value.values());
  out += "end\n";
  return out;
}

TransformerModel apply_adapters(const TransformerModel& base, std::string_view bytes) {
  model::detail::HeaderReader r(bytes);
  auto corrupt = [](const std::string& m) { return CheckpointError(CheckpointErrorKind::Corrupt, m); };
  auto count_of = [&](const std::vector<std::string>& w, std::string_view tag) {
    if (w.size() != 2 || w[0] != tag) throw corrupt("expected '" + std::string(tag) + "'");
    return static_cast<std::size_t>(parse_int(w[1], w[0]));
  };
  {
    const auto w = words(r.line());
    if (w.size() != 2 || w[0] != kMagic) throw CheckpointError(CheckpointErrorKind::BadMagic, "not an adapter file");
    if (w[1] != std::to_string(kVersion)) throw CheckpointError(CheckpointErrorKind::Version, "adapter format " + w[1]);
  }
  {
    const auto w = words(r.line());
    if (w.size() != 2 || w[0] != "base") throw corrupt("missing base line");
    const auto have = to_hex16(model::checkpoint_fingerprint(base));
    if (w[1] != have)
      throw CheckpointError(CheckpointErrorKind::Config, "adapters were trained on base " + w[1] + ", got " + have);
  }
  TransformerModel m = base;
  const std::size_t n_ad = count_of(words(r.line()), "adapters");
  Rng unused(0);
  for (std::size_t i = 0; i < n_ad; ++i) {
    const auto w = words(r.line());
    if (w.size() != 4) throw corrupt("bad adapter line");
    try {
      nn::attach_adapter(m.params(), m.linear(w[0]), static_cast<std::size_t>(parse_int(w[1], "rank")),
                         parse_double(w[2], "alpha"), parse_double(w[3], "dropout"), unused);
    } catch (const std::exception& e) {
      throw CheckpointError(CheckpointErrorKind::Config, e.what());
    }
  }
  freeze_base(m);
  auto& store = m.params();
  const std::size_t n_t = count_of(words(r.line()), "tensors");
  std::vector<nn::ParamId> order;
  std::size_t total = 0;
  for (std::size_t i = 0; i < n_t; ++i) {
    const auto w = words(r.line());
    if (w.size() < 2 || !store.contains(w[0])) throw CheckpointError(CheckpointErrorKind::Config, "unexpected adapter tensor");
    const auto id = store.find(w[0]);
    const auto rank = static_cast<std::size_t>(parse_int(w[1], "rank"));
    if (w.size() != 2 + rank) throw corrupt("bad dims for " + w[0]);
    std::vector<std::size_t> shape;
    for (std::size_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(parse_int(w[2 + d], "dim")));
    if (shape != store[id].value.shape()) throw CheckpointError(CheckpointErrorKind::Config, "shape mismatch for " + w[0]);
    order.push_back(id);
    total += store[id].value.size();
  }
  if (r.line() != "data") throw corrupt("missing data marker");
  const auto rest = r.rest();
  if (rest.size() < total * 8 + 4) throw CheckpointError(CheckpointErrorKind::Truncated, "adapter data ends early");
  std::size_t off = 0;
  for (auto id : order) {
    auto values = store[id].value.values();
    model::detail::read_doubles_le(rest.substr(off), values);
    off += values.size() * 8;
  }
  if (rest.substr(off) != "end\n") throw corrupt("bad trailer");
  return m;
}

void save_adapters(const TransformerModel& adapted, std::uint64_t base_fingerprint, const std::filesystem::path& path) {
  model::detail::write_file(path, serialize_adapters(adapted, base_fingerprint));
}

TransformerModel load_adapters(const TransformerModel& base, const std::filesystem::path& path) {
  return apply_adapters(base, model::detail::read_file(path));
}

}  // namespace canids::lora
