#pragma once

#include <filesystem>
#include <string>

#include "canids/can/frame.hpp"
#include "canids/util/rng.hpp"

namespace canids::fixture {

inline can::CanFrame random_frame(Rng& rng) {
  can::CanFrame f;
  f.timestamp = static_cast<can::Micros>(rng.below(100'000'000'000ULL));
  f.can_id = static_cast<std::uint32_t>(rng.below(0x800));
  f.dlc = static_cast<std::uint8_t>(rng.below(9));
  for (int i = 0; i < f.dlc; ++i) f.data.push_back(static_cast<std::uint8_t>(rng.below(256)));
  return f;
}

inline can::LabeledRecord random_record(Rng& rng) {
  can::LabeledRecord r;
  r.frame = random_frame(rng);
  r.label = can::class_from_index(rng.below(can::kNumClasses));
  r.injected = r.label != can::AttackClass::Normal;
  return r;
}

inline can::CanFrame make_frame(std::uint32_t id, std::initializer_list<std::uint8_t> bytes, can::Micros t = 0) {
  can::CanFrame f;
  f.timestamp = t;
  f.can_id = id;
  f.dlc = static_cast<std::uint8_t>(bytes.size());
  f.data = can::Payload(bytes);
  return f;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("canids_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace canids::fixture
