#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace canids::can {

inline constexpr std::uint32_t kMaxStandardId = 0x7FF;
inline constexpr std::size_t kMaxDlc = 8;

// Capture-relative time at microsecond resolution.
using Micros = std::int64_t;

enum class AttackClass : std::uint8_t { Normal = 0, DoS = 1, Fuzzy = 2, GearSpoof = 3, RpmSpoof = 4 };
inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::array<AttackClass, kNumClasses> kAllClasses = {
    AttackClass::Normal, AttackClass::DoS, AttackClass::Fuzzy, AttackClass::GearSpoof,
    AttackClass::RpmSpoof};

constexpr std::size_t index_of(AttackClass c) { return static_cast<std::size_t>(c); }
AttackClass class_from_index(std::size_t index);
std::string_view class_name(AttackClass c);
// Accepts the canonical names ("DoS") and lowercase file stems ("dos", "gear_spoof").
std::optional<AttackClass> class_from_name(std::string_view name);
// File stem used when a record set is written one file per class.
std::string_view class_file_stem(AttackClass c);

// Payload bytes with inline storage. size() may disagree with the frame's dlc
// until the frame is validated.
class Payload {
 public:
  Payload() = default;
  Payload(std::initializer_list<std::uint8_t> bytes);
  explicit Payload(std::span<const std::uint8_t> bytes);

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::uint8_t operator[](std::size_t i) const { return bytes_[i]; }
  std::uint8_t& operator[](std::size_t i) { return bytes_[i]; }
  std::span<const std::uint8_t> bytes() const { return {bytes_.data(), size_}; }
  void push_back(std::uint8_t b);
  void resize(std::size_t n);

  friend bool operator==(const Payload& a, const Payload& b) {
    if (a.size_ != b.size_) return false;
    for (std::size_t i = 0; i < a.size_; ++i)
      if (a.bytes_[i] != b.bytes_[i]) return false;
    return true;
  }

 private:
  std::array<std::uint8_t, kMaxDlc> bytes_{};
  std::uint8_t size_ = 0;
};

struct CanFrame {
  Micros timestamp = 0;
  std::uint32_t can_id = 0;
  std::uint8_t dlc = 0;
  Payload data;

  double seconds() const { return static_cast<double>(timestamp) * 1e-6; }
  friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

struct LabeledRecord {
  CanFrame frame;
  AttackClass label = AttackClass::Normal;
  bool injected = false;

  friend bool operator==(const LabeledRecord&, const LabeledRecord&) = default;
};

enum class FrameErrorKind { IdOutOfRange, DlcOutOfRange, LengthMismatch, NegativeTimestamp };

class FrameError : public std::runtime_error {
 public:
  FrameError(FrameErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  FrameErrorKind kind() const { return kind_; }

 private:
  FrameErrorKind kind_;
};

// Returns the frame unchanged when every invariant holds, throws FrameError
// naming the first violated invariant otherwise.
CanFrame validate_frame(const CanFrame& frame);

enum class ParseErrorKind {
  FieldCount,
  BadTimestamp,
  BadId,
  IdOutOfRange,
  BadDlc,
  DlcOutOfRange,
  BadPayload,
  BadFlag,
};
std::string_view parse_error_name(ParseErrorKind kind);

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, std::size_t line, const std::string& detail);
  ParseErrorKind kind() const { return kind_; }
  std::size_t line() const { return line_; }

 private:
  ParseErrorKind kind_;
  std::size_t line_;
};

struct ParsedFrame {
  CanFrame frame;
  bool injected = false;
};

// Parses `timestamp,canid,dlc,data...,flag`. The flag is R (regular) or T
// (injected); it carries no class, so the label of an injected record is
// taken from source_class.
ParsedFrame parse_frame(std::string_view line, std::size_t line_no = 0);
LabeledRecord parse_record(std::string_view line, AttackClass source_class,
                           std::size_t line_no = 0);

// Inverse of parse_record: 6 fractional timestamp digits, 4-digit id, lowercase hex.
std::string emit_record(const LabeledRecord& rec);

// Reads a whole log. Timestamps that look like epoch seconds (first record
// >= 1e8 s) are re-based so the capture starts at 0.
std::vector<LabeledRecord> read_log(const std::filesystem::path& path, AttackClass source_class);
std::vector<LabeledRecord> parse_log(std::string_view text, AttackClass source_class);
void write_log(const std::filesystem::path& path, std::span<const LabeledRecord> records);
std::string emit_log(std::span<const LabeledRecord> records);

// Infers the source class from a file name such as "dos.csv", "DoS_dataset.csv",
// "RPM_dataset.csv" or "normal.csv".
std::optional<AttackClass> class_from_filename(const std::filesystem::path& path);

// Reads every class file in a directory (sorted by class, then file name).
std::vector<LabeledRecord> read_log_dir(const std::filesystem::path& dir);
// Writes one <stem>.csv per class present in records. Records keep their order.
void write_log_dir(const std::filesystem::path& dir, std::span<const LabeledRecord> records);

}  // namespace canids::can
