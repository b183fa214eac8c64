#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "canids/metrics/metrics.hpp"
#include "canids/util/rng.hpp"
#include "json.hpp"

using namespace canids;
using namespace canids::metrics;

namespace {

struct Oracle {
  double ba = 0, prec = 0, dr = 0, f1 = 0, far = 0;
};

// Straight pair counting, no confusion matrix.
Oracle brute_force(const std::vector<int>& pred, const std::vector<int>& truth, int n) {
  Oracle o;
  int present = 0;
  for (int c = 0; c < n; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && truth[i] == c;
      fp += pred[i] == c && truth[i] != c;
      fn += pred[i] != c && truth[i] == c;
    }
    if (tp + fn == 0) continue;
    ++present;
    const double p = tp + fp == 0 ? 0 : tp / (tp + fp);
    const double r = tp / (tp + fn);
    o.prec += p;
    o.dr += r;
    o.f1 += p + r == 0 ? 0 : 2 * p * r / (p + r);
  }
  o.ba = o.dr / present;
  o.dr /= present;
  o.prec /= present;
  o.f1 /= present;
  double normal = 0, alarms = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (truth[i] == 0) {
      ++normal;
      alarms += pred[i] != 0;
    }
  o.far = normal == 0 ? 0 : alarms / normal;
  return o;
}

}  // namespace

TEST(Metrics, ConfusionMatrixExamples) {
  const std::vector<int> y = {0, 1, 2, 3, 4, 1};
  const auto cm = confusion_matrix(y, y);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(cm.at(i, j), i == j ? (i == 1 ? 2u : 1u) : 0u);
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1}, all_normal(6, 0);
  EXPECT_EQ(confusion_matrix(all_normal, labels).at(1, 0), 3u);
}

TEST(Metrics, ConfusionMatrixErrors) {
  EXPECT_THROW(confusion_matrix(std::vector<int>{0, 1}, std::vector<int>{0}), MetricsError);
  EXPECT_THROW(confusion_matrix(std::vector<int>{5}, std::vector<int>{0}), MetricsError);
  EXPECT_THROW(confusion_matrix(std::vector<int>{0}, std::vector<int>{-1}), MetricsError);
  EXPECT_THROW(compute_metrics(ConfusionMatrix(5)), MetricsError);
}

TEST(Metrics, PerfectAndSimpleExamples) {
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < 5; ++i) cm.add(i, i, 10);
  const auto r = compute_metrics(cm);
  EXPECT_EQ(r.ba, 1.0);
  EXPECT_EQ(r.prec, 1.0);
  EXPECT_EQ(r.dr, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.far, 0.0);
  for (const auto& row : r.classes) {
    EXPECT_EQ(row.prec, 1.0);
    EXPECT_EQ(row.dr, 1.0);
    EXPECT_EQ(row.far, 0.0);
    EXPECT_EQ(row.f1, 1.0);
  }

  ConfusionMatrix two(2);
  two.add(0, 0, 9);
  two.add(0, 1, 1);
  two.add(1, 1, 7);
  two.add(1, 0, 3);
  EXPECT_NEAR(compute_metrics(two).ba, 0.8, 1e-15);
}

TEST(Metrics, FalseAlarmRateAtScale) {
  ConfusionMatrix cm;
  cm.add(0, 0, 10'000'000 - 31);
  cm.add(0, 2, 31);
  cm.add(1, 1, 5000);
  const auto r = compute_metrics(cm);
  EXPECT_NEAR(r.far, 3.1e-6, 1e-18);
  EXPECT_EQ(r.present_classes, 2u);
}

TEST(Metrics, EmptyClassIsMarkedNotNaN) {
  ConfusionMatrix cm;
  cm.add(0, 0, 5);
  cm.add(1, 1, 5);
  const auto r = compute_metrics(cm);
  const auto& gear = r.classes[3];
  EXPECT_TRUE(gear.empty);
  EXPECT_EQ(gear.dr, 0.0);
  EXPECT_EQ(gear.instances, 0u);
  EXPECT_EQ(r.ba, 1.0);  // absent classes do not drag the mean down
  std::uint64_t inst = 0;
  for (const auto& c : r.classes) {
    inst += c.instances;
    for (double v : {c.prec, c.dr, c.far, c.f1}) EXPECT_FALSE(std::isnan(v));
  }
  EXPECT_EQ(inst, cm.total());
  const auto j = nlohmann::json::parse(report_json(r, "toy"));
  EXPECT_TRUE(j.dump().find("empty") != std::string::npos);

  ConfusionMatrix no_normal;
  no_normal.add(1, 1, 3);
  const auto nn = compute_metrics(no_normal);
  EXPECT_TRUE(nn.far_undefined);
  EXPECT_EQ(nn.far, 0.0);
}

TEST(Metrics, MatchesBruteForceOracle) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(1000);
    std::vector<int> pred(n), truth(n);
    const int skew = static_cast<int>(rng.below(5));
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(5));
      pred[i] = rng.uniform() < 0.7 ? truth[i] : static_cast<int>(rng.below(5));
      if (trial % 3 == 0 && truth[i] == skew) truth[i] = 0;  // leaves a class absent
    }
    const auto cm = confusion_matrix(pred, truth);
    ASSERT_EQ(cm.total(), n);
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_EQ(cm.tp(c) + cm.fp(c) + cm.fn(c) + cm.tn(c), n);
      for (std::size_t p = 0; p < 5; ++p) {
        std::uint64_t k = 0;
        for (std::size_t i = 0; i < n; ++i) k += truth[i] == static_cast<int>(c) && pred[i] == static_cast<int>(p);
        EXPECT_EQ(cm.at(c, p), k);
      }
    }
    const auto r = compute_metrics(cm);
    const auto o = brute_force(pred, truth, 5);
    EXPECT_NEAR(r.ba, o.ba, 1e-12);
    EXPECT_NEAR(r.prec, o.prec, 1e-12);
    EXPECT_NEAR(r.dr, o.dr, 1e-12);
    EXPECT_NEAR(r.f1, o.f1, 1e-12);
    EXPECT_NEAR(r.far, o.far, 1e-12);
    EXPECT_EQ(r.ba, r.dr);
    for (double v : {r.ba, r.prec, r.dr, r.far, r.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (const auto& row : r.classes) {
      const double h = row.prec + row.dr == 0 ? 0 : 2 * row.prec * row.dr / (row.prec + row.dr);
      EXPECT_NEAR(row.f1, h, 1e-12);
    }
  }
}

TEST(Metrics, AttackPermutationInvariance) {
  Rng rng(7);
  std::vector<int> pred(500), truth(500);
  for (std::size_t i = 0; i < 500; ++i) {
    truth[i] = static_cast<int>(rng.below(5));
    pred[i] = rng.uniform() < 0.6 ? truth[i] : static_cast<int>(rng.below(5));
  }
  const auto base = compute_metrics(confusion_matrix(pred, truth));
  std::vector<int> perm = {0, 1, 2, 3, 4};
  for (int t = 0; t < 20; ++t) {
    std::shuffle(perm.begin() + 1, perm.end(), std::mt19937(t));
    std::vector<int> p2(500), t2(500);
    for (std::size_t i = 0; i < 500; ++i) {
      p2[i] = perm[pred[i]];
      t2[i] = perm[truth[i]];
    }
    const auto r = compute_metrics(confusion_matrix(p2, t2));
    EXPECT_NEAR(r.ba, base.ba, 1e-12);
    EXPECT_EQ(r.far, base.far);
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_NEAR(r.classes[perm[c]].dr, base.classes[c].dr, 1e-15);
      EXPECT_NEAR(r.classes[perm[c]].prec, base.classes[c].prec, 1e-15);
    }
  }
}

TEST(Metrics, TableAndJsonShape) {
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < 5; ++i) cm.add(i, i, 100);
  cm.add(0, 1, 2);
  const auto r = compute_metrics(cm);
  const auto table = report_table(r, "encoder");
  EXPECT_NE(table.find("Model Type"), std::string::npos);
  EXPECT_NE(table.find("Attack Type"), std::string::npos);
  for (const auto& n : default_class_names()) EXPECT_NE(table.find(n), std::string::npos);
  const auto j = nlohmann::json::parse(report_json(r, "encoder"));
  EXPECT_NEAR(j.at("BA").get<double>(), r.ba, 0);
  EXPECT_EQ(j.at("confusion_matrix").size(), 5u);
}
