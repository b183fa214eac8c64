#pragma once

#include "canids/util/rng.hpp"

namespace canids::nn {

// Train mode enables dropout, which draws from rng. Eval mode is deterministic
// and never touches rng.
struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;

  static ForwardContext eval() { return {}; }
};

}  // namespace canids::nn
