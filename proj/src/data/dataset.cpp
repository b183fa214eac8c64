#include "canids/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "canids/util/rng.hpp"
#include "json.hpp"

namespace canids::data {

using can::LabeledRecord;

namespace {

std::array<IndexList, can::kNumClasses> by_class(std::span<const LabeledRecord> records,
                                                 std::span<const std::size_t> pool) {
  std::array<IndexList, can::kNumClasses> out;
  for (std::size_t idx : pool) {
    if (idx >= records.size()) throw DatasetError("record index out of range");
    out[can::index_of(records[idx].label)].push_back(idx);
  }
  return out;
}

IndexList all_indices(std::size_t n) {
  IndexList v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// Guards floor() against products such as 0.1 * 30 = 2.9999999999999996.
std::size_t floor_count(double fraction, std::size_t n) {
  const double x = fraction * static_cast<double>(n);
  return static_cast<std::size_t>(std::floor(x * (1.0 + 1e-12)));
}

void count_into(std::span<const LabeledRecord> records, const IndexList& idx,
                std::array<std::size_t, can::kNumClasses>& counts) {
  counts.fill(0);
  for (auto i : idx) ++counts[can::index_of(records[i].label)];
}

}  // namespace

void SplitConfig::validate() const {
  auto unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw DatasetError("train_fraction must lie in (0, 1)");
  if (!unit(subsample_p)) throw DatasetError("subsample p must lie in (0, 1]");
  if (!(normal_ratio >= 1.0)) throw DatasetError("normal_ratio must be >= 1");
  if (!(inner_train_fraction > 0.0 && inner_train_fraction < 1.0))
    throw DatasetError("inner_train_fraction must lie in (0, 1)");
}

std::pair<IndexList, IndexList> stratified_split(std::span<const LabeledRecord> records,
                                                 std::span<const std::size_t> pool, double fraction,
                                                 std::uint64_t seed) {
  if (pool.empty()) throw DatasetError("cannot split an empty record set");
  if (!(fraction > 0.0 && fraction < 1.0)) throw DatasetError("split fraction must lie in (0, 1)");
  auto groups = by_class(records, pool);
  IndexList a, b;
  for (std::size_t c = 0; c < can::kNumClasses; ++c) {
    auto& g = groups[c];
    if (g.empty()) continue;
    Rng rng(Rng::derive(seed, c));
    rng.shuffle(g);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(g.size())));
    a.insert(a.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(take));
    b.insert(b.end(), g.begin() + static_cast<std::ptrdiff_t>(take), g.end());
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {std::move(a), std::move(b)};
}

std::pair<IndexList, IndexList> stratified_split(std::span<const LabeledRecord> records,
                                                 double fraction, std::uint64_t seed) {
  const auto pool = all_indices(records.size());
  return stratified_split(records, pool, fraction, seed);
}

IndexList balanced_subsample(std::span<const LabeledRecord> records,
                             std::span<const std::size_t> pool, double p, std::uint64_t seed,
                             double normal_ratio) {
  if (!(p > 0.0 && p <= 1.0)) throw DatasetError("subsample p must lie in (0, 1]");
  auto groups = by_class(records, pool);
  IndexList out;
  for (std::size_t c = 0; c < can::kNumClasses; ++c) {
    auto& g = groups[c];
    if (g.empty()) continue;
    const double fraction = c == can::index_of(can::AttackClass::Normal) ? p / normal_ratio : p;
    const std::size_t take = floor_count(fraction, g.size());
    if (take == 0)
      throw DatasetError("subsample yields zero records for class " +
                         std::string(can::class_name(can::class_from_index(c))));
    Rng rng(Rng::derive(seed ^ 0x5eed5a5bULL, c));
    // Partial Fisher-Yates: the first `take` slots are a uniform draw without replacement.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(g.size() - i));
      std::swap(g[i], g[j]);
    }
    out.insert(out.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

IndexList balanced_subsample(std::span<const LabeledRecord> records, double p, std::uint64_t seed,
                             double normal_ratio) {
  const auto pool = all_indices(records.size());
  return balanced_subsample(records, pool, p, seed, normal_ratio);
}

DatasetBundle prepare_bundle(std::span<const LabeledRecord> records, const SplitConfig& config) {
  config.validate();
  DatasetBundle b;
  auto [pool, test] = stratified_split(records, config.train_fraction, Rng::derive(config.seed, 1));
  const IndexList subset =
      balanced_subsample(records, pool, config.subsample_p, Rng::derive(config.seed, 2), config.normal_ratio);
  auto [train, val] =
      stratified_split(records, subset, config.inner_train_fraction, Rng::derive(config.seed, 3));
  b.train = std::move(train);
  b.validation = std::move(val);
  b.test = std::move(test);
  count_into(records, b.train, b.train_counts);
  count_into(records, b.validation, b.validation_counts);
  count_into(records, b.test, b.test_counts);
  return b;
}

std::vector<LabeledRecord> gather(std::span<const LabeledRecord> records,
                                  std::span<const std::size_t> indices) {
  std::vector<LabeledRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= records.size()) throw DatasetError("index " + std::to_string(i) + " out of range");
    out.push_back(records[i]);
  }
  return out;
}

std::string bundle_manifest_json(const DatasetBundle& bundle, const SplitConfig& config,
                                 std::span<const std::string> sources) {
  nlohmann::ordered_json j;
  j["format"] = "canids-split-v1";
  j["sources"] = std::vector<std::string>(sources.begin(), sources.end());
  j["config"] = {{"train_fraction", config.train_fraction},
                 {"subsample_p", config.subsample_p},
                 {"normal_ratio", config.normal_ratio},
                 {"inner_train_fraction", config.inner_train_fraction},
                 {"seed", config.seed}};
  auto counts = [](const std::array<std::size_t, can::kNumClasses>& c) {
    nlohmann::ordered_json o;
    for (std::size_t i = 0; i < can::kNumClasses; ++i)
      o[std::string(can::class_name(can::class_from_index(i)))] = c[i];
    return o;
  };
  j["counts"] = {{"train", counts(bundle.train_counts)},
                 {"validation", counts(bundle.validation_counts)},
                 {"test", counts(bundle.test_counts)}};
  j["train"] = bundle.train;
  j["validation"] = bundle.validation;
  j["test"] = bundle.test;
  return j.dump() + "\n";
}

DatasetBundle bundle_from_manifest_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("format", "") != "canids-split-v1") throw DatasetError("not a split manifest");
  DatasetBundle b;
  b.train = j.at("train").get<IndexList>();
  b.validation = j.at("validation").get<IndexList>();
  b.test = j.at("test").get<IndexList>();
  auto counts = [&](const char* part, std::array<std::size_t, can::kNumClasses>& out) {
    for (std::size_t i = 0; i < can::kNumClasses; ++i)
      out[i] = j.at("counts").at(part).at(std::string(can::class_name(can::class_from_index(i))));
  };
  counts("train", b.train_counts);
  counts("validation", b.validation_counts);
  counts("test", b.test_counts);
  return b;
}

BatchIterator::BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                             std::size_t epoch, bool drop_last)
    : order_(all_indices(n)), batch_size_(batch_size), drop_last_(drop_last) {
  if (batch_size == 0) throw DatasetError("batch size must be >= 1");
  Rng rng(Rng::derive(seed, 0xba7c4000ULL + epoch));
  rng.shuffle(order_);
}

std::size_t BatchIterator::batch_count() const {
  const std::size_t n = order_.size();
  return drop_last_ ? n / batch_size_ : (n + batch_size_ - 1) / batch_size_;
}

std::optional<std::span<const std::size_t>> BatchIterator::next() {
  const std::size_t remaining = order_.size() - pos_;
  if (remaining == 0 || (drop_last_ && remaining < batch_size_)) return std::nullopt;
  const std::size_t len = std::min(batch_size_, remaining);
  std::span<const std::size_t> out(order_.data() + pos_, len);
  pos_ += len;
  return out;
}

std::vector<IndexList> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                    std::size_t epoch, bool drop_last) {
  BatchIterator it(n, batch_size, seed, epoch, drop_last);
  std::vector<IndexList> out;
  while (auto b = it.next()) out.emplace_back(b->begin(), b->end());
  return out;
}

}  // namespace canids::data
