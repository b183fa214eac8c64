#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "canids/can/frame.hpp"

namespace canids::text {

using TokenId = std::int32_t;

enum class Arch { Encoder, Decoder };
std::string_view arch_name(Arch arch);
Arch arch_from_name(std::string_view name);

class TokenizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Closed nibble-level vocabulary. Ids are dense; [PAD] is 0.
class Vocab {
 public:
  static constexpr int kVersion = 1;
  static constexpr TokenId kPad = 0, kCls = 1, kSep = 2, kBos = 3, kEos = 4, kUnk = 5;

  Vocab();

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // throws TokenizeError when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;  // throws TokenizeError when out of range
  static bool is_special(TokenId id) { return id >= kPad && id <= kUnk; }

  // "#canids-vocab v<version>" then one `token<TAB>id` line per entry.
  std::string to_text() const;
  static Vocab from_text(std::string_view text);
  std::uint64_t hash() const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct TextOptions {
  bool include_dlc = true;
  bool include_timestamp = false;  // appends "| <8 hex nibbles of the microsecond count>"

  friend bool operator==(const TextOptions&, const TextOptions&) = default;
};

struct TokenSequence {
  std::vector<TokenId> ids;     // exactly max_len entries
  std::vector<std::uint8_t> mask;  // 1 over the real prefix, 0 over padding
  std::size_t pool_index = 0;   // [CLS] for encoders, [EOS] for decoders
  std::size_t length = 0;       // number of real tokens

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct EncodedBatch {
  std::vector<TokenSequence> sequences;
  std::vector<int> labels;
};

inline constexpr std::size_t kDefaultMaxLen = 48;

// `ID h h h DLC d D b b ...`: 3 id nibbles, the dlc digit, two nibbles per byte.
std::string serialize_frame(const can::CanFrame& frame, const TextOptions& options = {});

class Tokenizer {
 public:
  Tokenizer(Arch arch, std::size_t max_len = kDefaultMaxLen, TextOptions options = {});

  Arch arch() const { return arch_; }
  std::size_t max_len() const { return max_len_; }
  const TextOptions& options() const { return options_; }
  const Vocab& vocab() const { return vocab_; }

  TokenSequence tokenize(std::string_view text) const;
  std::string detokenize(const TokenSequence& seq) const;
  TokenSequence encode(const can::CanFrame& frame) const;
  EncodedBatch encode_batch(std::span<const can::LabeledRecord> records) const;

 private:
  Arch arch_;
  std::size_t max_len_;
  TextOptions options_;
  Vocab vocab_;
};

void write_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab read_vocab(const std::filesystem::path& path);

}  // namespace canids::text
