#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "canids/model/transformer.hpp"

namespace canids::model {

inline constexpr int kCheckpointVersion = 1;

enum class CheckpointErrorKind { Io, BadMagic, Version, Truncated, Vocab, Config, Corrupt };
std::string_view checkpoint_error_name(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(checkpoint_error_name(kind)) + ": " + what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

// Layout (docs/checkpoint_format.md): text header, raw little-endian doubles
// for every tensor in store order, then "end\n".
std::string serialize_checkpoint(const TransformerModel& model);
TransformerModel deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path);
TransformerModel load_checkpoint(const std::filesystem::path& path);

// FNV-1a of the serialized checkpoint; identifies a base model for adapter files.
std::uint64_t checkpoint_fingerprint(const TransformerModel& model);

// Shared plumbing for the checkpoint and adapter-file formats.
namespace detail {

void append_doubles_le(std::string& out, std::span<const double> values);
void read_doubles_le(std::string_view bytes, std::span<double> out);

// Sequential line reader over a byte buffer.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}
  // Next '\n'-terminated line without the terminator; throws Truncated at EOF.
  std::string_view line();
  std::string_view rest() const { return bytes_.substr(pos_); }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace detail

}  // namespace canids::model
