#include "canids/can/frame.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace canids::can {
namespace {

constexpr std::array<std::string_view, kNumClasses> kNames = {"Normal", "DoS", "Fuzzy",
                                                              "GearSpoof", "RpmSpoof"};
constexpr std::array<std::string_view, kNumClasses> kStems = {"normal", "dos", "fuzzy",
                                                              "gear_spoof", "rpm_spoof"};

// Epoch-style captures are re-based; relative captures never reach this.
constexpr Micros kEpochThreshold = 100'000'000LL * 1'000'000LL;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

template <typename T>
bool parse_hex(std::string_view s, T& out) {
  if (s.empty() || s.size() > 2 * sizeof(T)) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out, 16);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_timestamp(std::string_view s, Micros& out) {
  const auto dot = s.find('.');
  const std::string_view whole = s.substr(0, dot);
  std::string_view frac = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  if (whole.empty() || frac.size() > 6) return false;
  if (dot != std::string_view::npos && frac.empty()) return false;
  long long secs = 0;
  auto [p1, e1] = std::from_chars(whole.data(), whole.data() + whole.size(), secs);
  if (e1 != std::errc() || p1 != whole.data() + whole.size() || secs < 0) return false;
  long long micros = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    int digit = 0;
    if (i < frac.size()) {
      if (!std::isdigit(static_cast<unsigned char>(frac[i]))) return false;
      digit = frac[i] - '0';
    }
    micros = micros * 10 + digit;
  }
  out = secs * 1'000'000LL + micros;
  return true;
}

}  // namespace

AttackClass class_from_index(std::size_t index) {
  if (index >= kNumClasses) throw std::out_of_range("class index " + std::to_string(index));
  return static_cast<AttackClass>(index);
}

std::string_view class_name(AttackClass c) { return kNames[index_of(c)]; }
std::string_view class_file_stem(AttackClass c) { return kStems[index_of(c)]; }

std::optional<AttackClass> class_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (name == kNames[i] || name == kStems[i]) return static_cast<AttackClass>(i);
  const std::string l = lower(name);
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (l == lower(kNames[i])) return static_cast<AttackClass>(i);
  return std::nullopt;
}

std::optional<AttackClass> class_from_filename(const std::filesystem::path& path) {
  const std::string stem = lower(path.stem().string());
  if (auto exact = class_from_name(stem)) return exact;
  if (stem.find("dos") != std::string::npos) return AttackClass::DoS;
  if (stem.find("fuzzy") != std::string::npos) return AttackClass::Fuzzy;
  if (stem.find("gear") != std::string::npos) return AttackClass::GearSpoof;
  if (stem.find("rpm") != std::string::npos) return AttackClass::RpmSpoof;
  if (stem.find("normal") != std::string::npos || stem.find("free") != std::string::npos)
    return AttackClass::Normal;
  return std::nullopt;
}

Payload::Payload(std::initializer_list<std::uint8_t> bytes) {
  if (bytes.size() > kMaxDlc) throw std::length_error("payload longer than 8 bytes");
  for (auto b : bytes) bytes_[size_++] = b;
}

Payload::Payload(std::span<const std::uint8_t> bytes) {
  if (bytes.size() > kMaxDlc) throw std::length_error("payload longer than 8 bytes");
  for (auto b : bytes) bytes_[size_++] = b;
}

void Payload::push_back(std::uint8_t b) {
  if (size_ == kMaxDlc) throw std::length_error("payload longer than 8 bytes");
  bytes_[size_++] = b;
}

void Payload::resize(std::size_t n) {
  if (n > kMaxDlc) throw std::length_error("payload longer than 8 bytes");
  for (std::size_t i = n; i < size_; ++i) bytes_[i] = 0;
  size_ = static_cast<std::uint8_t>(n);
}

CanFrame validate_frame(const CanFrame& frame) {
  if (frame.can_id > kMaxStandardId)
    throw FrameError(FrameErrorKind::IdOutOfRange, "can id exceeds 0x7FF");
  if (frame.dlc > kMaxDlc) throw FrameError(FrameErrorKind::DlcOutOfRange, "dlc exceeds 8");
  if (frame.data.size() != frame.dlc)
    throw FrameError(FrameErrorKind::LengthMismatch, "payload length differs from dlc");
  if (frame.timestamp < 0)
    throw FrameError(FrameErrorKind::NegativeTimestamp, "negative timestamp");
  return frame;
}

std::string_view parse_error_name(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::FieldCount: return "field-count";
    case ParseErrorKind::BadTimestamp: return "bad-timestamp";
    case ParseErrorKind::BadId: return "bad-id";
    case ParseErrorKind::IdOutOfRange: return "id-out-of-range";
    case ParseErrorKind::BadDlc: return "bad-dlc";
    case ParseErrorKind::DlcOutOfRange: return "dlc-out-of-range";
    case ParseErrorKind::BadPayload: return "bad-payload";
    case ParseErrorKind::BadFlag: return "bad-flag";
  }
  return "unknown";
}

ParseError::ParseError(ParseErrorKind kind, std::size_t line, const std::string& detail)
    : std::runtime_error("line " + std::to_string(line) + ": " +
                         std::string(parse_error_name(kind)) + ": " + detail),
      kind_(kind),
      line_(line) {}

ParsedFrame parse_frame(std::string_view line, std::size_t line_no) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.remove_suffix(1);

  // Room beyond the widest valid line so an oversized dlc is reported as such.
  std::array<std::string_view, 32> fields;
  std::size_t n = 0;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    const auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                          : comma - start);
    if (n == fields.size())
      throw ParseError(ParseErrorKind::FieldCount, line_no, "too many fields");
    fields[n++] = field;
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (n < 4) throw ParseError(ParseErrorKind::FieldCount, line_no, "expected at least 4 fields");

  ParsedFrame out;
  CanFrame& f = out.frame;
  if (!parse_timestamp(fields[0], f.timestamp))
    throw ParseError(ParseErrorKind::BadTimestamp, line_no, std::string(fields[0]));

  std::uint32_t id = 0;
  if (!parse_hex(fields[1], id)) throw ParseError(ParseErrorKind::BadId, line_no, std::string(fields[1]));
  if (id > kMaxStandardId)
    throw ParseError(ParseErrorKind::IdOutOfRange, line_no, std::string(fields[1]));
  f.can_id = id;

  unsigned dlc = 0;
  {
    auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), dlc);
    if (ec != std::errc() || ptr != fields[2].data() + fields[2].size() || fields[2].empty())
      throw ParseError(ParseErrorKind::BadDlc, line_no, std::string(fields[2]));
  }
  if (dlc > kMaxDlc) throw ParseError(ParseErrorKind::DlcOutOfRange, line_no, std::to_string(dlc));
  f.dlc = static_cast<std::uint8_t>(dlc);
  if (n != 3 + dlc + 1)
    throw ParseError(ParseErrorKind::FieldCount, line_no,
                     "expected " + std::to_string(3 + dlc + 1) + " fields, got " + std::to_string(n));

  for (unsigned i = 0; i < dlc; ++i) {
    std::uint8_t b = 0;
    if (!parse_hex(fields[3 + i], b))
      throw ParseError(ParseErrorKind::BadPayload, line_no, std::string(fields[3 + i]));
    f.data.push_back(b);
  }

  const std::string_view flag = fields[3 + dlc];
  if (flag == "T") {
    out.injected = true;
  } else if (flag != "R") {
    throw ParseError(ParseErrorKind::BadFlag, line_no, std::string(flag));
  }
  return out;
}

LabeledRecord parse_record(std::string_view line, AttackClass source_class, std::size_t line_no) {
  ParsedFrame parsed = parse_frame(line, line_no);
  LabeledRecord rec;
  rec.frame = parsed.frame;
  rec.injected = parsed.injected && source_class != AttackClass::Normal;
  if (parsed.injected && source_class == AttackClass::Normal)
    throw ParseError(ParseErrorKind::BadFlag, line_no, "injected frame in an attack-free source");
  rec.label = rec.injected ? source_class : AttackClass::Normal;
  return rec;
}

std::string emit_record(const LabeledRecord& rec) {
  const CanFrame& f = rec.frame;
  char buf[96];
  int len = std::snprintf(buf, sizeof buf, "%lld.%06lld,%04x,%u",
                          static_cast<long long>(f.timestamp / 1'000'000),
                          static_cast<long long>(f.timestamp % 1'000'000),
                          static_cast<unsigned>(f.can_id), static_cast<unsigned>(f.dlc));
  for (std::size_t i = 0; i < f.data.size(); ++i)
    len += std::snprintf(buf + len, sizeof buf - len, ",%02x", f.data[i]);
  std::snprintf(buf + len, sizeof buf - len, ",%c", rec.injected ? 'T' : 'R');
  return buf;
}

std::vector<LabeledRecord> parse_log(std::string_view text, AttackClass source_class) {
  std::vector<LabeledRecord> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    out.push_back(parse_record(line, source_class, line_no));
  }
  if (!out.empty() && out.front().frame.timestamp >= kEpochThreshold) {
    const Micros origin = out.front().frame.timestamp;
    for (auto& r : out) {
      r.frame.timestamp -= origin;
      if (r.frame.timestamp < 0)
        throw ParseError(ParseErrorKind::BadTimestamp, 0, "timestamp precedes capture start");
    }
  }
  return out;
}

std::vector<LabeledRecord> read_log(const std::filesystem::path& path, AttackClass source_class) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_log(ss.str(), source_class);
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), e.line(), path.string() + ": " + e.what());
  }
}

std::string emit_log(std::span<const LabeledRecord> records) {
  std::string out;
  out.reserve(records.size() * 48);
  for (const auto& r : records) {
    out += emit_record(r);
    out += '\n';
  }
  return out;
}

void write_log(const std::filesystem::path& path, std::span<const LabeledRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::string text = emit_log(records);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<LabeledRecord> read_log_dir(const std::filesystem::path& dir) {
  std::vector<std::pair<AttackClass, std::filesystem::path>> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = lower(entry.path().extension().string());
    if (ext != ".csv") continue;
    const auto cls = class_from_filename(entry.path());
    if (!cls) throw std::runtime_error("cannot infer class from file name " + entry.path().string());
    files.emplace_back(*cls, entry.path());
  }
  if (files.empty()) throw std::runtime_error("no class CSV files in " + dir.string());
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return index_of(a.first) < index_of(b.first);
    return a.second.filename() < b.second.filename();
  });
  std::vector<LabeledRecord> out;
  for (const auto& [cls, path] : files) {
    auto part = read_log(path, cls);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

void write_log_dir(const std::filesystem::path& dir, std::span<const LabeledRecord> records) {
  std::filesystem::create_directories(dir);
  std::array<std::vector<LabeledRecord>, kNumClasses> by_class;
  for (const auto& r : records) by_class[index_of(r.label)].push_back(r);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (by_class[c].empty()) continue;
    write_log(dir / (std::string(class_file_stem(class_from_index(c))) + ".csv"), by_class[c]);
  }
}

}  // namespace canids::can
