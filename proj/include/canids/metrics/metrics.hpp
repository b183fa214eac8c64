#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace canids::metrics {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes = 5);

  std::size_t n_classes() const { return n_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);

  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t pred) const;

  // One-vs-rest reduction for class i.
  std::uint64_t tp(std::size_t i) const { return at(i, i); }
  std::uint64_t fp(std::size_t i) const { return col_sum(i) - at(i, i); }
  std::uint64_t fn(std::size_t i) const { return row_sum(i) - at(i, i); }
  std::uint64_t tn(std::size_t i) const { return total() - tp(i) - fp(i) - fn(i); }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                 std::size_t n_classes = 5);

// 0/0 is reported as 0 and flagged rather than producing NaN.
struct Ratio {
  double value = 0.0;
  bool undefined = false;
};
Ratio ratio(std::uint64_t num, std::uint64_t den);

struct ClassRow {
  std::string name;
  std::uint64_t instances = 0;  // row sum
  double prec = 0.0, dr = 0.0, far = 0.0, f1 = 0.0;
  bool empty = false;           // class absent from the labels
  bool prec_undefined = false;  // never predicted
  bool far_undefined = false;   // no negatives
};

std::vector<ClassRow> per_class_report(const ConfusionMatrix& cm, std::span<const std::string> names = {});

struct MetricsReport {
  double ba = 0.0, prec = 0.0, dr = 0.0, far = 0.0, f1 = 0.0;
  bool far_undefined = false;      // no Normal records
  std::size_t present_classes = 0;  // classes averaged over
  std::uint64_t total = 0;
  std::vector<ClassRow> classes;
  ConfusionMatrix matrix;
};

// BA = mean DR_i; PREC, DR and F1 are macro means of the per-class values,
// all taken over classes present in the labels. FAR counts Normal (class 0)
// records predicted as any attack.
MetricsReport compute_metrics(const ConfusionMatrix& cm, std::span<const std::string> names = {});

std::vector<std::string> default_class_names();

std::string report_json(const MetricsReport& report, const std::string& model_name = "");
// Summary row (Model, BA, PREC, DR, FAR, F1) then one row per class
// (Attack Type, Instances, PREC, DR, FAR, F1).
std::string report_table(const MetricsReport& report, const std::string& model_name = "model");

}  // namespace canids::metrics
