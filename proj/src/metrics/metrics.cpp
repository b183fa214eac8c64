#include "canids/metrics/metrics.hpp"

#include <cstdio>
#include "json.hpp"

#include "canids/can/frame.hpp"

namespace canids::metrics {

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes < 2) throw MetricsError("confusion matrix needs at least 2 classes");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
  if (truth >= n_ || pred >= n_) throw MetricsError("class index out of range");
  counts_[truth * n_ + pred] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < n_; ++t) s += at(t, pred);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                 std::size_t n_classes) {
  if (predictions.size() != labels.size())
    throw MetricsError("predictions and labels differ in length (" + std::to_string(predictions.size()) + " vs " +
                       std::to_string(labels.size()) + ")");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || predictions[i] < 0) throw MetricsError("negative class index");
    cm.add(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(predictions[i]));
  }
  return cm;
}

Ratio ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

std::vector<std::string> default_class_names() {
  std::vector<std::string> out;
  for (auto c : can::kAllClasses) out.emplace_back(can::class_name(c));
  return out;
}

std::vector<ClassRow> per_class_report(const ConfusionMatrix& cm, std::span<const std::string> names) {
  std::vector<ClassRow> rows;
  for (std::size_t i = 0; i < cm.n_classes(); ++i) {
    ClassRow r;
    r.name = i < names.size() ? names[i] : (i < can::kNumClasses ? std::string(can::class_name(can::class_from_index(i)))
                                                                 : "class" + std::to_string(i));
    r.instances = cm.row_sum(i);
    const auto tp = cm.tp(i), fp = cm.fp(i), fn = cm.fn(i), tn = cm.tn(i);
    const Ratio p = ratio(tp, tp + fp), d = ratio(tp, tp + fn), f = ratio(fp, fp + tn);
    r.prec = p.value;
    r.dr = d.value;
    r.far = f.value;
    r.empty = d.undefined;
    r.prec_undefined = p.undefined;
    r.far_undefined = f.undefined;
    r.f1 = r.prec + r.dr > 0.0 ? 2.0 * r.prec * r.dr / (r.prec + r.dr) : 0.0;
    rows.push_back(std::move(r));
  }
  return rows;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm, std::span<const std::string> names) {
  MetricsReport rep;
  rep.total = cm.total();
  if (rep.total == 0) throw MetricsError("no evaluated records");
  rep.matrix = cm;
  rep.classes = per_class_report(cm, names);
  double sp = 0.0, sd = 0.0, sf = 0.0;
  for (const auto& r : rep.classes) {
    if (r.empty) continue;
    ++rep.present_classes;
    sp += r.prec;
    sd += r.dr;
    sf += r.f1;
  }
  const double k = static_cast<double>(rep.present_classes);
  rep.ba = sd / k;
  rep.dr = sd / k;
  rep.prec = sp / k;
  rep.f1 = sf / k;
  const std::uint64_t normal = cm.row_sum(0);
  const Ratio far = ratio(normal - cm.at(0, 0), normal);
  rep.far = far.value;
  rep.far_undefined = far.undefined;
  return rep;
}

std::string report_json(const MetricsReport& rep, const std::string& model_name) {
  nlohmann::ordered_json j;
  if (!model_name.empty()) j["model"] = model_name;
  j["aggregation"] = "macro over present classes";
  j["instances"] = rep.total;
  j["BA"] = rep.ba;
  j["PREC"] = rep.prec;
  j["DR"] = rep.dr;
  j["FAR"] = rep.far;
  j["F1"] = rep.f1;
  if (rep.far_undefined) j["FAR_marker"] = "no normal records";
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : rep.classes) {
    nlohmann::ordered_json o;
    o["class"] = r.name;
    o["instances"] = r.instances;
    o["PREC"] = r.prec;
    o["DR"] = r.dr;
    o["FAR"] = r.far;
    o["F1"] = r.f1;
    std::vector<std::string> markers;
    if (r.empty) markers.emplace_back("empty class");
    if (r.prec_undefined) markers.emplace_back("never predicted");
    if (r.far_undefined) markers.emplace_back("no negatives");
    if (!markers.empty()) o["markers"] = markers;
    rows.push_back(std::move(o));
  }
  j["per_class"] = std::move(rows);
  nlohmann::ordered_json m = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < rep.matrix.n_classes(); ++t) {
    std::vector<std::uint64_t> row;
    for (std::size_t p = 0; p < rep.matrix.n_classes(); ++p) row.push_back(rep.matrix.at(t, p));
    m.push_back(row);
  }
  j["confusion_matrix"] = std::move(m);
  return j.dump(2) + "\n";
}

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string sci(double v) {
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace

std::string report_table(const MetricsReport& rep, const std::string& model_name) {
  std::string out;
  std::size_t w = std::max<std::size_t>(12, model_name.size() + 2);
  for (const auto& r : rep.classes) w = std::max(w, r.name.size() + 2);
  out += pad("Model Type", w) + pad("BA", 10) + pad("PREC", 10) + pad("DR", 10) + pad("FAR", 10) + "F1\n";
  out += pad(model_name, w) + pad(fixed6(rep.ba), 10) + pad(fixed6(rep.prec), 10) + pad(fixed6(rep.dr), 10) +
         pad(sci(rep.far) + (rep.far_undefined ? "*" : ""), 10) + fixed6(rep.f1) + "\n\n";
  out += pad("Attack Type", w) + pad("Instances", 11) + pad("PREC", 10) + pad("DR", 10) + pad("FAR", 10) + "F1\n";
  bool marked = false;
  for (const auto& r : rep.classes) {
    const std::string mark = r.empty ? "  (empty class)" : "";
    marked = marked || r.empty;
    out += pad(r.name, w) + pad(std::to_string(r.instances), 11) + pad(fixed6(r.prec), 10) + pad(fixed6(r.dr), 10) +
           pad(sci(r.far), 10) + fixed6(r.f1) + mark + "\n";
  }
  if (rep.far_undefined) out += "* no normal records; FAR reported as 0\n";
  return out;
}

}  // namespace canids::metrics
