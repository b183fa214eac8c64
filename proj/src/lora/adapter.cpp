#include "canids/lora/adapter.hpp"

namespace canids::lora {

using nn::Mat;

nn::Mat adapter_delta(const nn::ParamStore& store, const LoraAdapter& adapter, nn::ConstRef x,
                      const nn::ForwardContext& ctx, AdapterCache* cache) {
  const auto up = store.value(adapter.up).mat();
  const auto down = store.value(adapter.down).mat();
  if (x.cols() != down.cols()) throw nn::ShapeError("lora: input width does not match V");
  Mat input = x;
  Mat keep;
  if (ctx.train && adapter.dropout > 0.0) {
    if (!ctx.rng) throw std::logic_error("lora: train-mode dropout needs an rng");
    const double inv = 1.0 / (1.0 - adapter.dropout);
    keep.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < keep.size(); ++i)
      keep.data()[i] = ctx.rng->bernoulli(adapter.dropout) ? 0.0 : inv;
    input.array() *= keep.array();
  }
  Mat low(x.rows(), down.rows());
  low.noalias() = input * down.transpose();
  Mat delta(x.rows(), up.rows());
  delta.noalias() = low * up.transpose();
  delta *= adapter.scale();
  if (cache) {
    cache->input = std::move(input);
    cache->keep = std::move(keep);
    cache->low = std::move(low);
  }
  return delta;
}

nn::Mat adapter_backward(nn::ParamStore& store, const LoraAdapter& adapter, const AdapterCache& cache,
                         nn::ConstRef dy) {
  const double s = adapter.scale();
  const auto up = store.value(adapter.up).mat();
  const auto down = store.value(adapter.down).mat();
  Mat dlow(dy.rows(), up.cols());
  dlow.noalias() = dy * up;
  dlow *= s;
  if (!store.frozen(adapter.up)) store.grad(adapter.up).mat().noalias() += s * (dy.transpose() * cache.low);
  if (!store.frozen(adapter.down)) store.grad(adapter.down).mat().noalias() += dlow.transpose() * cache.input;
  Mat dx(dy.rows(), down.cols());
  dx.noalias() = dlow * down;
  if (cache.keep.size() > 0) dx.array() *= cache.keep.array();
  return dx;
}

}  // namespace canids::lora
