#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "canids/can/frame.hpp"

namespace canids::data {

class DatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Indices refer to positions in the record list the split was computed on;
// they are the identity used for the disjointness checks.
using IndexList = std::vector<std::size_t>;

struct SplitConfig {
  double train_fraction = 0.7;      // outer split; the rest is the test set
  double subsample_p = 0.01;        // per attack class; Normal uses p / normal_ratio
  double normal_ratio = 10.0;
  double inner_train_fraction = 0.7;  // train vs validation inside the subsample
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetBundle {
  IndexList train;
  IndexList validation;
  IndexList test;
  std::array<std::size_t, can::kNumClasses> train_counts{};
  std::array<std::size_t, can::kNumClasses> validation_counts{};
  std::array<std::size_t, can::kNumClasses> test_counts{};
};

// Per class, the first round(fraction * n_class) records of a seeded shuffle go
// to part_a. Both parts keep the input order.
std::pair<IndexList, IndexList> stratified_split(std::span<const can::LabeledRecord> records,
                                                 std::span<const std::size_t> pool, double fraction,
                                                 std::uint64_t seed);
std::pair<IndexList, IndexList> stratified_split(std::span<const can::LabeledRecord> records,
                                                 double fraction, std::uint64_t seed);

// floor(p * n) records per attack class and floor(p / normal_ratio * n) normal
// records, sampled without replacement. Result keeps the input order.
IndexList balanced_subsample(std::span<const can::LabeledRecord> records,
                             std::span<const std::size_t> pool, double p, std::uint64_t seed,
                             double normal_ratio = 10.0);
IndexList balanced_subsample(std::span<const can::LabeledRecord> records, double p,
                             std::uint64_t seed, double normal_ratio = 10.0);

// Outer train/test split of everything, subsample of the training side only,
// then the inner train/validation split. The test side is never subsampled.
DatasetBundle prepare_bundle(std::span<const can::LabeledRecord> records, const SplitConfig& config);

std::vector<can::LabeledRecord> gather(std::span<const can::LabeledRecord> records,
                                       std::span<const std::size_t> indices);

std::string bundle_manifest_json(const DatasetBundle& bundle, const SplitConfig& config,
                                 std::span<const std::string> sources);
DatasetBundle bundle_from_manifest_json(const std::string& text);

// Deterministic per-epoch batching: the order for epoch e depends only on
// (seed, e).
class BatchIterator {
 public:
  BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
                bool drop_last);

  std::optional<std::span<const std::size_t>> next();
  std::size_t batch_count() const;
  const IndexList& order() const { return order_; }

 private:
  IndexList order_;
  std::size_t batch_size_;
  bool drop_last_;
  std::size_t pos_ = 0;
};

std::vector<IndexList> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                    std::size_t epoch, bool drop_last);

}  // namespace canids::data
