#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "canids/nn/tensor.hpp"

namespace canids::nn {

// One tensor under test: its live values (perturbed in place during the check)
// and the analytic gradient computed beforehand.
struct GradTarget {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Elements probed per tensor; 0 probes every element.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;

  std::string summary() const;
};

// Central differences of a scalar loss against analytic gradients. Values are
// restored after each probe. Throws std::domain_error on non-finite losses.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           const GradCheckOptions& options = {});

// Targets every non-frozen parameter of a store; the store's grad buffers
// must already hold the analytic gradient.
std::vector<GradTarget> targets_from(ParamStore& store, bool include_frozen = false);

}  // namespace canids::nn
