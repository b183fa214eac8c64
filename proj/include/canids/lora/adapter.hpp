#pragma once

#include <cstddef>
#include <stdexcept>

#include "canids/nn/context.hpp"
#include "canids/nn/ops.hpp"

namespace canids::lora {

inline constexpr std::size_t kDefaultRank = 16;
inline constexpr double kDefaultAlpha = 64.0;
inline constexpr double kDefaultDropout = 0.1;
inline constexpr double kInitStd = 0.02;

class LoraError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Low-rank update (alpha / rank) * U V added to a frozen base weight W0.
// U is (out x rank) and starts at zero; V is (rank x in).
struct LoraAdapter {
  nn::ParamId up = 0;    // U
  nn::ParamId down = 0;  // V
  std::size_t rank = kDefaultRank;
  double alpha = kDefaultAlpha;
  double dropout = kDefaultDropout;

  double scale() const { return alpha / static_cast<double>(rank); }
};

struct AdapterCache {
  nn::Mat input;  // dropped-out adapter input
  nn::Mat keep;   // dropout keep mask scaled by 1/(1-p); empty when dropout is inactive
  nn::Mat low;    // input V^T
};

// (alpha/r) * U (V dropout(x)) for every row of x.
nn::Mat adapter_delta(const nn::ParamStore& store, const LoraAdapter& adapter, nn::ConstRef x,
                      const nn::ForwardContext& ctx, AdapterCache* cache);

// Accumulates dU and dV (unless frozen) and returns the gradient w.r.t. x.
nn::Mat adapter_backward(nn::ParamStore& store, const LoraAdapter& adapter, const AdapterCache& cache,
                         nn::ConstRef dy);

}  // namespace canids::lora
