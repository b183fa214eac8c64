#include <gtest/gtest.h>

#include <set>

#include "canids/data/dataset.hpp"

using namespace canids;
using namespace canids::data;
using can::AttackClass;
using can::LabeledRecord;

namespace {

std::vector<LabeledRecord> records_per_class(std::array<std::size_t, can::kNumClasses> counts) {
  std::vector<LabeledRecord> out;
  can::Micros t = 0;
  for (std::size_t c = 0; c < can::kNumClasses; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      LabeledRecord r;
      r.frame.timestamp = t++;
      r.label = can::class_from_index(c);
      r.injected = c != 0;
      out.push_back(r);
    }
  return out;
}

std::size_t count_class(const std::vector<LabeledRecord>& recs, const IndexList& idx, AttackClass c) {
  std::size_t n = 0;
  for (auto i : idx) n += recs[i].label == c;
  return n;
}

}  // namespace

TEST(Dataset, StratifiedSplitSeventyThirty) {
  const auto recs = records_per_class({100, 100, 100, 100, 100});
  const auto [a, b] = stratified_split(recs, 0.7, 1);
  for (auto c : can::kAllClasses) {
    EXPECT_EQ(count_class(recs, a, c), 70u);
    EXPECT_EQ(count_class(recs, b, c), 30u);
  }
  std::vector<std::size_t> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

TEST(Dataset, StratifiedSplitSingleRecordAndDeterminism) {
  const auto one = records_per_class({1, 0, 0, 0, 0});
  const auto [a, b] = stratified_split(one, 0.7, 3);
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(b.size(), 0u);
  const auto recs = records_per_class({50, 40, 30, 20, 10});
  EXPECT_EQ(stratified_split(recs, 0.7, 5), stratified_split(recs, 0.7, 5));
  EXPECT_NE(stratified_split(recs, 0.7, 5).first, stratified_split(recs, 0.7, 6).first);
  EXPECT_THROW(stratified_split(recs, 0.0, 1), DatasetError);
  EXPECT_THROW(stratified_split(recs, 1.0, 1), DatasetError);
}

TEST(Dataset, StratifiedSplitRoundingProperty) {
  for (std::size_t n = 1; n < 60; ++n) {
    for (double f : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const auto recs = records_per_class({n, n + 1, 0, 2 * n, 3});
      const auto [a, b] = stratified_split(recs, f, n);
      for (auto c : can::kAllClasses) {
        const double nc = static_cast<double>(count_class(recs, a, c) + count_class(recs, b, c));
        EXPECT_LE(std::abs(static_cast<double>(count_class(recs, a, c)) - f * nc), 1.0);
      }
      EXPECT_EQ(a.size() + b.size(), recs.size());
    }
  }
}

TEST(Dataset, BalancedSubsampleCounts) {
  const auto recs = records_per_class({1'000'000, 587'521, 0, 0, 0});
  const auto sub = balanced_subsample(recs, 0.01, 1);
  EXPECT_EQ(count_class(recs, sub, AttackClass::DoS), 5875u);
  EXPECT_EQ(count_class(recs, sub, AttackClass::Normal), 1000u);
  const std::set<std::size_t> unique(sub.begin(), sub.end());
  EXPECT_EQ(unique.size(), sub.size());
}

TEST(Dataset, BalancedSubsampleFullAttackKeepsEverything) {
  const auto recs = records_per_class({1000, 300, 200, 100, 50});
  const auto sub = balanced_subsample(recs, 1.0, 2);
  EXPECT_EQ(count_class(recs, sub, AttackClass::Normal), 100u);
  EXPECT_EQ(count_class(recs, sub, AttackClass::DoS), 300u);
  EXPECT_EQ(count_class(recs, sub, AttackClass::RpmSpoof), 50u);
}

TEST(Dataset, BalancedSubsampleRatioAndErrors) {
  const auto recs = records_per_class({5000, 5000, 5000, 5000, 5000});
  const auto sub = balanced_subsample(recs, 0.2, 4);
  EXPECT_EQ(count_class(recs, sub, AttackClass::Normal) * 10, count_class(recs, sub, AttackClass::Fuzzy));
  EXPECT_THROW(balanced_subsample(records_per_class({10, 10, 0, 0, 0}), 0.01, 1), DatasetError);
  EXPECT_THROW(balanced_subsample(recs, 0.0, 1), DatasetError);
  EXPECT_THROW(balanced_subsample(recs, 1.5, 1), DatasetError);
}

TEST(Dataset, BundleHasNoLeakageAndUntouchedTest) {
  const auto recs = records_per_class({20000, 20000, 10000, 5000, 5000});
  SplitConfig cfg;
  cfg.subsample_p = 0.1;
  cfg.seed = 3;
  const auto b = prepare_bundle(recs, cfg);
  std::set<std::size_t> test(b.test.begin(), b.test.end());
  for (auto i : b.train) EXPECT_FALSE(test.contains(i));
  for (auto i : b.validation) EXPECT_FALSE(test.contains(i));
  std::set<std::size_t> train(b.train.begin(), b.train.end());
  for (auto i : b.validation) EXPECT_FALSE(train.contains(i));
  // The test side is the whole 30%, never subsampled.
  EXPECT_EQ(count_class(recs, b.test, AttackClass::Normal), 6000u);
  EXPECT_EQ(count_class(recs, b.test, AttackClass::DoS), 6000u);
  EXPECT_EQ(b.test_counts[0], 6000u);
  // Normal is sampled ten times more sparsely than the attacks.
  const auto n_normal = b.train_counts[0] + b.validation_counts[0];
  const auto n_dos = b.train_counts[1] + b.validation_counts[1];
  EXPECT_EQ(n_normal, 140u);
  EXPECT_EQ(n_dos, 1400u);
}

TEST(Dataset, ManifestRoundTrip) {
  const auto recs = records_per_class({2000, 1000, 1000, 500, 500});
  SplitConfig cfg;
  cfg.subsample_p = 0.1;
  const auto b = prepare_bundle(recs, cfg);
  const std::vector<std::string> sources = {"normal.csv", "dos.csv"};
  const auto json = bundle_manifest_json(b, cfg, sources);
  const auto back = bundle_from_manifest_json(json);
  EXPECT_EQ(back.train, b.train);
  EXPECT_EQ(back.validation, b.validation);
  EXPECT_EQ(back.test, b.test);
  EXPECT_EQ(back.train_counts, b.train_counts);
}

TEST(Dataset, BatchSizesAndDropLast) {
  const auto keep = make_batches(10, 4, 1, 0, false);
  ASSERT_EQ(keep.size(), 3u);
  EXPECT_EQ(keep[0].size(), 4u);
  EXPECT_EQ(keep[1].size(), 4u);
  EXPECT_EQ(keep[2].size(), 2u);
  EXPECT_EQ(make_batches(10, 4, 1, 0, true).size(), 2u);
  EXPECT_EQ(BatchIterator(10, 4, 1, 0, true).batch_count(), 2u);
}

TEST(Dataset, EpochOrdersAreDeterministicAndDistinct) {
  EXPECT_EQ(make_batches(50, 4, 7, 0, false), make_batches(50, 4, 7, 0, false));
  EXPECT_NE(make_batches(50, 4, 7, 0, false), make_batches(50, 4, 7, 1, false));
  BatchIterator it(50, 4, 7, 0, false);
  std::vector<std::size_t> seen;
  while (auto b = it.next()) seen.insert(seen.end(), b->begin(), b->end());
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(seen[i], i);
}
