#include "canids/sim/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "canids/util/kvconfig.hpp"
#include "canids/util/rng.hpp"
#include "json.hpp"

namespace canids::sim {

using can::AttackClass;
using can::LabeledRecord;
using can::Micros;

namespace {

Micros to_micros(double ms) { return static_cast<Micros>(std::llround(ms * 1000.0)); }
Micros seconds_to_micros(double s) { return static_cast<Micros>(std::llround(s * 1e6)); }

bool is_spoof(AttackClass c) { return c == AttackClass::GearSpoof || c == AttackClass::RpmSpoof; }

// Per-id payload state machine.
class PayloadSource {
 public:
  PayloadSource(const BackgroundId& id, Rng& rng) : mode_(id.mode) {
    base_.resize(id.dlc);
    for (std::size_t i = 0; i < id.dlc; ++i) base_[i] = static_cast<std::uint8_t>(rng.below(256));
    walk_ = 0x400 + static_cast<int>(rng.below(0x400));
  }

  can::Payload next(Rng& rng, std::size_t k) {
    can::Payload p = base_;
    if (p.empty()) return p;
    switch (mode_) {
      case PayloadMode::Constant:
        break;
      case PayloadMode::Counter:
        p[p.size() - 1] = static_cast<std::uint8_t>(k & 0xFF);
        break;
      case PayloadMode::RandomWalk: {
        walk_ += static_cast<int>(rng.below(7)) - 3;
        walk_ = std::clamp(walk_, 0x200, 0x1200);
        p[0] = static_cast<std::uint8_t>((walk_ >> 8) & 0xFF);
        if (p.size() > 1) p[1] = static_cast<std::uint8_t>(walk_ & 0xFF);
        break;
      }
    }
    return p;
  }

 private:
  PayloadMode mode_;
  can::Payload base_;
  int walk_ = 0;
};

}  // namespace

void validate(const BackgroundProfile& profile) {
  if (profile.ids.empty()) throw SimError("background profile has no ids");
  if (!(profile.duration_s >= 0.0)) throw SimError("capture duration must be >= 0");
  for (const auto& id : profile.ids) {
    if (!(id.period_ms > 0.0) || to_micros(id.period_ms) <= 0)
      throw SimError("background period must be > 0");
    if (id.can_id > can::kMaxStandardId) throw SimError("background id exceeds 0x7FF");
    if (id.can_id == 0x000) throw SimError("background id 0x000 is reserved for DoS traffic");
    if (id.dlc > can::kMaxDlc) throw SimError("background dlc exceeds 8");
  }
}

void validate(const AttackSpec& spec) {
  if (spec.kind == AttackClass::Normal) throw SimError("attack kind must not be Normal");
  if (!(spec.interval_ms > 0.0) || to_micros(spec.interval_ms) <= 0)
    throw SimError("attack interval must be > 0");
  if (is_spoof(spec.kind) != spec.target_id.has_value())
    throw SimError("target id is required exactly for spoofing attacks");
  if (spec.target_id && *spec.target_id > can::kMaxStandardId)
    throw SimError("spoof target id exceeds 0x7FF");
  if (!(spec.start_s <= spec.end_s)) throw SimError("attack window start after end");
}

BackgroundProfile default_profile(double duration_s, std::uint64_t seed) {
  BackgroundProfile p;
  p.duration_s = duration_s;
  p.seed = seed;
  p.ids = {
      {0x0a0, 10.0, PayloadMode::Counter, 8},    {0x130, 10.0, PayloadMode::RandomWalk, 8},
      {0x164, 10.0, PayloadMode::Constant, 8},   {0x18f, 10.0, PayloadMode::Counter, 8},
      {0x260, 10.0, PayloadMode::RandomWalk, 8}, {0x2a0, 10.0, PayloadMode::Constant, 8},
      {kDefaultRpmTarget, 10.0, PayloadMode::RandomWalk, 8},
      {0x329, 10.0, PayloadMode::Counter, 8},    {0x370, 10.0, PayloadMode::Constant, 8},
      {kDefaultGearTarget, 10.0, PayloadMode::Counter, 8},
  };
  return p;
}

AttackSpec default_attack(AttackClass kind, double start_s, double end_s) {
  AttackSpec s;
  s.kind = kind;
  s.start_s = start_s;
  s.end_s = end_s;
  switch (kind) {
    case AttackClass::DoS: s.interval_ms = 0.3; break;
    case AttackClass::Fuzzy: s.interval_ms = 0.5; break;
    case AttackClass::GearSpoof:
      s.interval_ms = 1.0;
      s.target_id = kDefaultGearTarget;
      s.payload = {0x01, 0x45, 0x60, 0xff, 0x6b, 0x00, 0x00, 0x00};
      break;
    case AttackClass::RpmSpoof:
      s.interval_ms = 1.0;
      s.target_id = kDefaultRpmTarget;
      s.payload = {0x05, 0x20, 0xea, 0x0a, 0x20, 0x1a, 0x00, 0x7f};
      break;
    case AttackClass::Normal:
      throw SimError("no default attack for Normal");
  }
  return s;
}

std::vector<AttackSpec> default_attacks(double start_s, double end_s) {
  return {default_attack(AttackClass::DoS, start_s, end_s),
          default_attack(AttackClass::Fuzzy, start_s, end_s),
          default_attack(AttackClass::GearSpoof, start_s, end_s),
          default_attack(AttackClass::RpmSpoof, start_s, end_s)};
}

Capture generate_normal(const BackgroundProfile& profile) {
  validate(profile);
  Capture cap;
  cap.duration = seconds_to_micros(profile.duration_s);
  Rng rng(profile.seed);
  std::size_t total = 0;
  for (const auto& id : profile.ids) total += cap.duration / to_micros(id.period_ms) + 1;
  cap.records.reserve(total);
  for (const auto& id : profile.ids) {
    const Micros period = to_micros(id.period_ms);
    PayloadSource source(id, rng);
    const auto n = static_cast<std::size_t>(cap.duration / period) + 1;
    for (std::size_t k = 0; k < n; ++k) {
      LabeledRecord r;
      r.frame.timestamp = static_cast<Micros>(k) * period;
      r.frame.can_id = id.can_id;
      r.frame.dlc = id.dlc;
      r.frame.data = source.next(rng, k);
      cap.records.push_back(r);
    }
  }
  std::stable_sort(cap.records.begin(), cap.records.end(),
                   [](const LabeledRecord& a, const LabeledRecord& b) {
                     return a.frame.timestamp < b.frame.timestamp;
                   });
  return cap;
}

Capture inject_attack(const Capture& capture, const AttackSpec& spec, std::uint64_t seed) {
  validate(spec);
  const Micros start = seconds_to_micros(spec.start_s);
  const Micros end = seconds_to_micros(spec.end_s);
  if (start < 0 || end > capture.duration)
    throw SimError("attack window lies outside the capture duration");
  const Micros interval = to_micros(spec.interval_ms);
  const auto n = static_cast<std::size_t>((end - start) / interval) + 1;

  Rng rng(seed);
  std::vector<LabeledRecord> injected;
  injected.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    LabeledRecord r;
    r.label = spec.kind;
    r.injected = true;
    r.frame.timestamp = start + static_cast<Micros>(k) * interval;
    switch (spec.kind) {
      case AttackClass::DoS:
        r.frame.can_id = 0x000;
        r.frame.dlc = 8;
        r.frame.data.resize(8);
        break;
      case AttackClass::Fuzzy:
        r.frame.can_id = static_cast<std::uint32_t>(rng.below(can::kMaxStandardId + 1));
        r.frame.dlc = 8;
        for (int i = 0; i < 8; ++i) r.frame.data.push_back(static_cast<std::uint8_t>(rng.below(256)));
        break;
      default:
        r.frame.can_id = *spec.target_id;
        r.frame.dlc = static_cast<std::uint8_t>(spec.payload.size());
        r.frame.data = spec.payload;
        break;
    }
    injected.push_back(r);
  }

  Capture out;
  out.duration = capture.duration;
  out.records.reserve(capture.records.size() + injected.size());
  // std::merge takes from the first range on ties: background frames precede
  // injections that share a timestamp.
  std::merge(capture.records.begin(), capture.records.end(), injected.begin(), injected.end(),
             std::back_inserter(out.records), [](const LabeledRecord& a, const LabeledRecord& b) {
               return a.frame.timestamp < b.frame.timestamp;
             });
  return out;
}

Manifest count(const std::vector<LabeledRecord>& records) {
  Manifest m;
  for (const auto& r : records) {
    auto& row = m.per_class[can::index_of(r.label)];
    ++row.total;
    ++m.all.total;
    if (r.injected) {
      ++row.injected;
      ++m.all.injected;
    } else {
      ++row.normal;
      ++m.all.normal;
    }
  }
  return m;
}

Simulation simulate_capture(const BackgroundProfile& profile, const std::vector<AttackSpec>& specs,
                            std::uint64_t seed) {
  std::array<bool, can::kNumClasses> seen{};
  for (const auto& s : specs) {
    validate(s);
    auto& flag = seen[can::index_of(s.kind)];
    if (flag) throw SimError("more than one attack spec for class " + std::string(can::class_name(s.kind)));
    flag = true;
  }
  Simulation sim;
  sim.capture = generate_normal(profile);
  for (const auto& s : specs)
    sim.capture = inject_attack(sim.capture, s, Rng::derive(seed, can::index_of(s.kind)));
  sim.manifest = count(sim.capture.records);
  return sim;
}

std::string Manifest::to_json() const {
  nlohmann::ordered_json j;
  auto row = [](const ClassCounts& c) {
    return nlohmann::ordered_json{{"total", c.total}, {"normal", c.normal}, {"injected", c.injected}};
  };
  for (std::size_t c = 0; c < can::kNumClasses; ++c)
    j[std::string(can::class_name(can::class_from_index(c)))] = row(per_class[c]);
  j["all"] = row(all);
  return j.dump(2) + "\n";
}

namespace {

PayloadMode mode_from_name(const std::string& s) {
  if (s == "constant") return PayloadMode::Constant;
  if (s == "counter") return PayloadMode::Counter;
  if (s == "random_walk" || s == "random-walk") return PayloadMode::RandomWalk;
  throw ConfigError("unknown payload mode '" + s + "'");
}

}  // namespace

BackgroundProfile read_profile(const std::string& path_or_default, double default_duration_s,
                               std::uint64_t seed) {
  if (path_or_default == "default") return default_profile(default_duration_s, seed);
  BackgroundProfile p;
  p.duration_s = default_duration_s;
  p.seed = seed;
  for (const auto& e : read_kv_file(path_or_default)) {
    if (e.key == "duration_s") {
      p.duration_s = parse_double(e.value, e.origin);
    } else if (e.key == "ecu") {
      // ecu = <id> <period_ms> <mode> [dlc]
      std::istringstream in(e.value);
      std::string id, period, mode, dlc = "8";
      if (!(in >> id >> period >> mode)) throw ConfigError(e.origin + ": ecu = <id> <period_ms> <mode> [dlc]");
      in >> dlc;
      BackgroundId b;
      b.can_id = static_cast<std::uint32_t>(parse_int(id, e.origin));
      b.period_ms = parse_double(period, e.origin);
      b.mode = mode_from_name(mode);
      b.dlc = static_cast<std::uint8_t>(parse_int(dlc, e.origin));
      p.ids.push_back(b);
    } else {
      throw ConfigError(e.origin + ": unknown profile key '" + e.key + "'");
    }
  }
  validate(p);
  return p;
}

std::vector<AttackSpec> read_attacks(const std::string& path_or_default, double duration_s) {
  if (path_or_default == "default" || path_or_default == "all") return default_attacks(0.0, duration_s);
  if (path_or_default == "none") return {};
  std::vector<AttackSpec> out;
  for (const auto& e : read_kv_file(path_or_default)) {
    if (e.key != "attack") throw ConfigError(e.origin + ": unknown attacks key '" + e.key + "'");
    // attack = <Class> [interval_ms=..] [start_s=..] [end_s=..] [target=..] [payload=aa,bb,..]
    std::istringstream in(e.value);
    std::string name;
    in >> name;
    const auto kind = can::class_from_name(name);
    if (!kind || *kind == AttackClass::Normal) throw ConfigError(e.origin + ": unknown attack '" + name + "'");
    AttackSpec s = default_attack(*kind, 0.0, duration_s);
    std::string tok;
    while (in >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw ConfigError(e.origin + ": expected name=value, got '" + tok + "'");
      const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
      if (k == "interval_ms") s.interval_ms = parse_double(v, e.origin);
      else if (k == "start_s") s.start_s = parse_double(v, e.origin);
      else if (k == "end_s") s.end_s = parse_double(v, e.origin);
      else if (k == "target") s.target_id = static_cast<std::uint32_t>(parse_int(v, e.origin));
      else if (k == "payload") {
        can::Payload p;
        for (const auto& b : split_list(v)) p.push_back(static_cast<std::uint8_t>(parse_int("0x" + b, e.origin)));
        s.payload = p;
      } else {
        throw ConfigError(e.origin + ": unknown attack field '" + k + "'");
      }
    }
    validate(s);
    out.push_back(s);
  }
  return out;
}

}  // namespace canids::sim
