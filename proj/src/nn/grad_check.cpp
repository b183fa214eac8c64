#include "canids/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "canids/util/rng.hpp"

namespace canids::nn {

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;
  Rng rng(options.seed);
  auto eval = [&] {
    const double v = loss();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: loss is not finite");
    return v;
  };
  eval();
  for (const auto& t : targets) {
    if (t.values.size() != t.analytic.size())
      throw ShapeError("grad_check: gradient size differs for " + t.name);
    std::vector<std::size_t> idx(t.values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_per_tensor > 0 && idx.size() > options.max_per_tensor) {
      rng.shuffle(idx);
      idx.resize(options.max_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckEntry e;
    e.name = t.name;
    for (std::size_t i : idx) {
      const double orig = t.values[i];
      t.values[i] = orig + options.step;
      const double up = eval();
      t.values[i] = orig - options.step;
      const double down = eval();
      t.values[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = t.analytic[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), options.floor});
      const double rel = std::abs(numeric - analytic) / denom;
      ++e.checked;
      if (rel >= e.max_rel_error) {
        e.max_rel_error = rel;
        e.worst_index = i;
        e.worst_analytic = analytic;
        e.worst_numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.entries.push_back(std::move(e));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

std::vector<GradTarget> targets_from(ParamStore& store, bool include_frozen) {
  std::vector<GradTarget> out;
  for (auto& p : store.all()) {
    if (p.frozen && !include_frozen) continue;
    out.push_back({p.name, p.value.values(), p.grad.values()});
  }
  return out;
}

std::string GradCheckReport::summary() const {
  std::string s;
  char buf[256];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "  %-32s max_rel=%.3e (n=%zu, worst #%zu a=%.6e n=%.6e)\n",
                  e.name.c_str(), e.max_rel_error, e.checked, e.worst_index, e.worst_analytic,
                  e.worst_numeric);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "  overall max_rel=%.3e tolerance=%.1e %s\n", max_rel_error, tolerance,
                passed ? "PASS" : "FAIL");
  return s + buf;
}

}  // namespace canids::nn
