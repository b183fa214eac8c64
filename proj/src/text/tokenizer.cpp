#include "canids/text/tokenizer.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "canids/util/hash.hpp"

namespace canids::text {
namespace {

constexpr std::string_view kVocabHeader = "#canids-vocab v";
constexpr char kNibbles[] = "0123456789abcdef";

std::string nibble(unsigned v) { return std::string(1, kNibbles[v & 0xF]); }

}  // namespace

std::string_view arch_name(Arch arch) { return arch == Arch::Encoder ? "encoder" : "decoder"; }

Arch arch_from_name(std::string_view name) {
  if (name == "encoder") return Arch::Encoder;
  if (name == "decoder") return Arch::Decoder;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

Vocab::Vocab() {
  tokens_ = {"[PAD]", "[CLS]", "[SEP]", "[BOS]", "[EOS]", "[UNK]"};
  for (unsigned v = 0; v < 16; ++v) tokens_.push_back(nibble(v));
  for (const char* t : {"ID", "DLC", "D", "|"}) tokens_.emplace_back(t);
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<TokenId>(i));
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) throw TokenizeError("token not in vocabulary: '" + std::string(token) + "'");
  return it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.contains(std::string(token)); }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw TokenizeError("token id out of vocabulary range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::to_text() const {
  std::string out = std::string(kVocabHeader) + std::to_string(kVersion) + "\n";
  for (std::size_t i = 0; i < tokens_.size(); ++i) out += tokens_[i] + "\t" + std::to_string(i) + "\n";
  return out;
}

Vocab Vocab::from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || !line.starts_with(kVocabHeader))
    throw TokenizeError("missing vocab header");
  if (line.substr(kVocabHeader.size()) != std::to_string(kVersion))
    throw TokenizeError("unsupported vocab version: " + line);
  Vocab v;
  v.tokens_.clear();
  v.ids_.clear();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw TokenizeError("malformed vocab line: " + line);
    const std::string tok = line.substr(0, tab);
    TokenId id = 0;
    const std::string num = line.substr(tab + 1);
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), id);
    if (ec != std::errc() || p != num.data() + num.size() || static_cast<std::size_t>(id) != v.tokens_.size())
      throw TokenizeError("vocab ids must be dense and ordered: " + line);
    v.ids_.emplace(tok, id);
    v.tokens_.push_back(tok);
  }
  if (v.tokens_.empty() || v.tokens_[0] != "[PAD]") throw TokenizeError("vocab must start with [PAD]");
  return v;
}

std::uint64_t Vocab::hash() const { return fnv1a(to_text()); }

std::string serialize_frame(const can::CanFrame& frame, const TextOptions& options) {
  std::string out = "ID";
  for (int shift = 8; shift >= 0; shift -= 4) out += " " + nibble(frame.can_id >> shift);
  if (options.include_dlc) out += " DLC " + nibble(frame.dlc);
  out += " D";
  for (std::size_t i = 0; i < frame.data.size(); ++i) {
    out += " " + nibble(frame.data[i] >> 4);
    out += " " + nibble(frame.data[i]);
  }
  if (options.include_timestamp) {
    out += " |";
    const auto ts = static_cast<std::uint64_t>(frame.timestamp);
    for (int shift = 28; shift >= 0; shift -= 4) out += " " + nibble(static_cast<unsigned>(ts >> shift));
  }
  return out;
}

Tokenizer::Tokenizer(Arch arch, std::size_t max_len, TextOptions options)
    : arch_(arch), max_len_(max_len), options_(options) {
  if (max_len < 3) throw std::invalid_argument("max_len must be >= 3");
}

TokenSequence Tokenizer::tokenize(std::string_view text) const {
  TokenSequence seq;
  seq.ids.reserve(max_len_);
  seq.ids.push_back(arch_ == Arch::Encoder ? Vocab::kCls : Vocab::kBos);
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && text[pos] == ' ') ++pos;
    if (pos >= text.size()) break;
    auto end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    seq.ids.push_back(vocab_.id(text.substr(pos, end - pos)));
    pos = end;
  }
  seq.ids.push_back(arch_ == Arch::Encoder ? Vocab::kSep : Vocab::kEos);
  if (seq.ids.size() > max_len_)
    throw TokenizeError("sequence of " + std::to_string(seq.ids.size()) +
                        " tokens exceeds max_len " + std::to_string(max_len_));
  seq.length = seq.ids.size();
  seq.pool_index = arch_ == Arch::Encoder ? 0 : seq.length - 1;
  seq.mask.assign(max_len_, 0);
  std::fill(seq.mask.begin(), seq.mask.begin() + static_cast<std::ptrdiff_t>(seq.length), 1);
  seq.ids.resize(max_len_, Vocab::kPad);
  return seq;
}

std::string Tokenizer::detokenize(const TokenSequence& seq) const {
  std::string out;
  for (TokenId id : seq.ids) {
    const std::string& tok = vocab_.token(id);
    if (id == Vocab::kUnk) throw TokenizeError("[UNK] in sequence");
    if (Vocab::is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

TokenSequence Tokenizer::encode(const can::CanFrame& frame) const {
  return tokenize(serialize_frame(frame, options_));
}

EncodedBatch Tokenizer::encode_batch(std::span<const can::LabeledRecord> records) const {
  EncodedBatch b;
  b.sequences.reserve(records.size());
  b.labels.reserve(records.size());
  for (const auto& r : records) {
    b.sequences.push_back(encode(r.frame));
    b.labels.push_back(static_cast<int>(can::index_of(r.label)));
  }
  return b;
}

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << vocab.to_text();
}

Vocab read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return Vocab::from_text(ss.str());
}

}  // namespace canids::text
