#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "canids/can/frame.hpp"

namespace canids::sim {

enum class PayloadMode { Constant, Counter, RandomWalk };

struct BackgroundId {
  std::uint32_t can_id = 0;
  double period_ms = 10.0;
  PayloadMode mode = PayloadMode::Constant;
  std::uint8_t dlc = 8;
};

struct BackgroundProfile {
  std::vector<BackgroundId> ids;
  double duration_s = 1.0;
  std::uint64_t seed = 0;
};

inline constexpr std::uint32_t kDefaultGearTarget = 0x43F;
inline constexpr std::uint32_t kDefaultRpmTarget = 0x316;

struct AttackSpec {
  can::AttackClass kind = can::AttackClass::DoS;
  double interval_ms = 0.3;
  std::optional<std::uint32_t> target_id;  // spoofing kinds only
  can::Payload payload;                    // spoofing kinds only
  double start_s = 0.0;
  double end_s = 1.0;
};

class SimError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Capture {
  can::Micros duration = 0;
  std::vector<can::LabeledRecord> records;
};

struct ClassCounts {
  std::size_t total = 0;
  std::size_t normal = 0;
  std::size_t injected = 0;
};

// Per-class counts plus an "all" row for the whole capture.
struct Manifest {
  std::array<ClassCounts, can::kNumClasses> per_class{};
  ClassCounts all;

  std::string to_json() const;
};

void validate(const BackgroundProfile& profile);
void validate(const AttackSpec& spec);

// Ten periodic ECUs including the default gear and RPM spoof targets.
BackgroundProfile default_profile(double duration_s, std::uint64_t seed);
// One spec per attack class over [start_s, end_s] with the reported intervals:
// DoS 0.3 ms, fuzzy 0.5 ms, gear and RPM spoofing 1 ms.
AttackSpec default_attack(can::AttackClass kind, double start_s, double end_s);
std::vector<AttackSpec> default_attacks(double start_s, double end_s);

// Periodic background traffic; each id emits floor(duration/period)+1 frames
// starting at t=0. Output is sorted by timestamp (ties keep profile order).
Capture generate_normal(const BackgroundProfile& profile);

// Interleaves injected frames into the capture. Injections start at the window
// start and step by the interval up to and including the window end.
Capture inject_attack(const Capture& capture, const AttackSpec& spec, std::uint64_t seed);

struct Simulation {
  Capture capture;
  Manifest manifest;
};

// Background plus every spec (at most one per class), merged by timestamp.
Simulation simulate_capture(const BackgroundProfile& profile, const std::vector<AttackSpec>& specs,
                            std::uint64_t seed);

Manifest count(const std::vector<can::LabeledRecord>& records);

BackgroundProfile read_profile(const std::string& path_or_default, double default_duration_s,
                               std::uint64_t seed);
std::vector<AttackSpec> read_attacks(const std::string& path_or_default, double duration_s);

}  // namespace canids::sim
