#include "canids/model/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "canids/util/hash.hpp"
#include "canids/util/kvconfig.hpp"

namespace canids::model {

namespace {

constexpr std::string_view kMagic = "CANIDS-CHECKPOINT";

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

std::size_t to_size(const std::string& s, const char* what) {
  try {
    const long long v = parse_int(s, what);
    if (v < 0) throw ConfigError("negative");
    return static_cast<std::size_t>(v);
  } catch (const ConfigError&) {
    throw CheckpointError(CheckpointErrorKind::Corrupt, std::string("bad ") + what + " '" + s + "'");
  }
}

double to_double(const std::string& s, const char* what) {
  try {
    return parse_double(s, what);
  } catch (const ConfigError&) {
    throw CheckpointError(CheckpointErrorKind::Corrupt, std::string("bad ") + what + " '" + s + "'");
  }
}

// "<tag> <count>" section header.
std::size_t section(detail::HeaderReader& r, std::string_view tag) {
  const auto w = words(r.line());
  if (w.size() != 2 || w[0] != tag) throw CheckpointError(CheckpointErrorKind::Corrupt, "expected '" + std::string(tag) + "' section");
  return to_size(w[1], "section count");
}

}  // namespace

std::string_view checkpoint_error_name(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::Io: return "io";
    case CheckpointErrorKind::BadMagic: return "bad-magic";
    case CheckpointErrorKind::Version: return "version-mismatch";
    case CheckpointErrorKind::Truncated: return "truncated";
    case CheckpointErrorKind::Vocab: return "vocab-mismatch";
    case CheckpointErrorKind::Config: return "incompatible-config";
    case CheckpointErrorKind::Corrupt: return "corrupt";
  }
  return "unknown";
}

namespace detail {

void append_doubles_le(std::string& out, std::span<const double> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 8);
  char* p = out.data() + start;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) *p++ = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
}

void read_doubles_le(std::string_view bytes, std::span<double> out) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (auto& v : out) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(*p++) << (8 * b);
    v = std::bit_cast<double>(bits);
  }
}

std::string_view HeaderReader::line() {
  const auto nl = bytes_.find('\n', pos_);
  if (nl == std::string_view::npos) throw CheckpointError(CheckpointErrorKind::Truncated, "header ends early");
  const auto out = bytes_.substr(pos_, nl - pos_);
  pos_ = nl + 1;
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "write failed for " + path.string());
}

}  // namespace detail

std::string serialize_checkpoint(const TransformerModel& model) {
  std::string out;
  out += std::string(kMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  out += "vocab " + std::to_string(text::Vocab::kVersion) + " " + to_hex16(model.tokenizer().vocab().hash()) + "\n";
  const auto kv = model.config().to_kv();
  out += "config " + std::to_string(kv.size()) + "\n";
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";

  std::vector<const nn::Linear*> adapted;
  for (const nn::Linear* l : model.linears())
    if (l->adapter) adapted.push_back(l);
  out += "adapters " + std::to_string(adapted.size()) + "\n";
  for (const nn::Linear* l : adapted)
    out += l->name + " " + std::to_string(l->adapter->rank) + " " + fmt_double(l->adapter->alpha) + " " +
           fmt_double(l->adapter->dropout) + "\n";

  const auto& params = model.params().all();
  out += "tensors " + std::to_string(params.size()) + "\n";
  for (const auto& p : params) {
    out += p.name + " " + (p.frozen ? "1" : "0") + " " + (p.decay ? "1" : "0") + " " + std::to_string(p.value.rank());
    for (auto d : p.value.shape()) out += " " + std::to_string(d);
    out += "\n";
  }
  out += "data\n";
  for (const auto& p : params) detail::append_doubles_le(out, p.value.values());
  out += "end\n";
  return out;
}

TransformerModel deserialize_checkpoint(std::string_view bytes) {
  detail::HeaderReader r(bytes);
  if (bytes.empty()) throw CheckpointError(CheckpointErrorKind::Truncated, "empty checkpoint");
  {
    const auto w = words(r.line());
    if (w.size() != 2 || w[0] != kMagic) throw CheckpointError(CheckpointErrorKind::BadMagic, "not a canids checkpoint");
    if (w[1] != std::to_string(kCheckpointVersion))
      throw CheckpointError(CheckpointErrorKind::Version,
                            "checkpoint format " + w[1] + ", expected " + std::to_string(kCheckpointVersion));
  }
  std::string vocab_hash;
  {
    const auto w = words(r.line());
    if (w.size() != 3 || w[0] != "vocab") throw CheckpointError(CheckpointErrorKind::Corrupt, "missing vocab line");
    if (w[1] != std::to_string(text::Vocab::kVersion))
      throw CheckpointError(CheckpointErrorKind::Vocab,
                            "vocab version " + w[1] + ", expected " + std::to_string(text::Vocab::kVersion));
    vocab_hash = w[2];
  }
  ModelConfig config;
  const std::size_t n_cfg = section(r, "config");
  for (std::size_t i = 0; i < n_cfg; ++i) {
    const auto line = r.line();
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw CheckpointError(CheckpointErrorKind::Corrupt, "bad config line");
    const std::string key(line.substr(0, eq)), value(line.substr(eq + 1));
    bool known = false;
    try {
      known = config.apply(key, value);
    } catch (const std::exception& e) {
      throw CheckpointError(CheckpointErrorKind::Config, e.what());
    }
    if (!known) throw CheckpointError(CheckpointErrorKind::Config, "unknown config key " + key);
  }
  std::optional<TransformerModel> built;
  try {
    built.emplace(config);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorKind::Config, e.what());
  }
  TransformerModel& model = *built;
  if (to_hex16(model.tokenizer().vocab().hash()) != vocab_hash)
    throw CheckpointError(CheckpointErrorKind::Vocab, "vocab fingerprint " + vocab_hash + " does not match");

  const std::size_t n_ad = section(r, "adapters");
  Rng unused(0);
  for (std::size_t i = 0; i < n_ad; ++i) {
    const auto w = words(r.line());
    if (w.size() != 4) throw CheckpointError(CheckpointErrorKind::Corrupt, "bad adapter line");
    try {
      nn::attach_adapter(model.params(), model.linear(w[0]), to_size(w[1], "rank"), to_double(w[2], "alpha"),
                         to_double(w[3], "dropout"), unused);
    } catch (const CheckpointError&) {
      throw;
    } catch (const std::exception& e) {
      throw CheckpointError(CheckpointErrorKind::Config, e.what());
    }
  }

  auto& store = model.params();
  const std::size_t n_t = section(r, "tensors");
  if (n_t != store.size())
    throw CheckpointError(CheckpointErrorKind::Config, "checkpoint holds " + std::to_string(n_t) +
                                                           " tensors, the config defines " + std::to_string(store.size()));
  std::vector<nn::ParamId> order;
  std::size_t total = 0;
  for (std::size_t i = 0; i < n_t; ++i) {
    const auto w = words(r.line());
    if (w.size() < 4) throw CheckpointError(CheckpointErrorKind::Corrupt, "bad tensor line");
    if (!store.contains(w[0])) throw CheckpointError(CheckpointErrorKind::Config, "unexpected tensor " + w[0]);
    const nn::ParamId id = store.find(w[0]);
    auto& p = store[id];
    const std::size_t rank = to_size(w[3], "rank");
    if (w.size() != 4 + rank) throw CheckpointError(CheckpointErrorKind::Corrupt, "bad tensor dims for " + w[0]);
    std::vector<std::size_t> shape;
    for (std::size_t d = 0; d < rank; ++d) shape.push_back(to_size(w[4 + d], "dim"));
    if (shape != p.value.shape())
      throw CheckpointError(CheckpointErrorKind::Config, "shape mismatch for " + w[0]);
    p.frozen = w[1] == "1";
    p.decay = w[2] == "1";
    order.push_back(id);
    total += p.value.size();
  }
  if (r.line() != "data") throw CheckpointError(CheckpointErrorKind::Corrupt, "missing data marker");
  const auto rest = r.rest();
  if (rest.size() < total * 8) throw CheckpointError(CheckpointErrorKind::Truncated, "tensor data ends early");
  std::size_t off = 0;
  for (auto id : order) {
    auto values = store[id].value.values();
    detail::read_doubles_le(rest.substr(off), values);
    off += values.size() * 8;
  }
  if (rest.substr(off) != "end\n") {
    if (rest.size() - off < 4) throw CheckpointError(CheckpointErrorKind::Truncated, "missing end marker");
    throw CheckpointError(CheckpointErrorKind::Corrupt, "trailing bytes after tensor data");
  }
  return std::move(*built);
}

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(model));
}

TransformerModel load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

std::uint64_t checkpoint_fingerprint(const TransformerModel& model) { return fnv1a(serialize_checkpoint(model)); }

}  // namespace canids::model
