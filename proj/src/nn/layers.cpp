#include "canids/nn/layers.hpp"

#include <algorithm>

namespace canids::nn {

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   bool with_bias, Rng& rng, double init_std) {
  Linear l;
  l.name = name;
  l.in = in;
  l.out = out;
  Tensor w({out, in});
  for (auto& v : w.values()) v = rng.normal(0.0, init_std);
  l.weight = store.add(name + ".weight", std::move(w));
  if (with_bias) l.bias = store.add(name + ".bias", Tensor({out}), /*decay=*/false);
  return l;
}

void attach_adapter(ParamStore& store, Linear& layer, std::size_t rank, double alpha, double dropout,
                    Rng& rng) {
  if (layer.adapter) throw lora::LoraError(layer.name + " already carries an adapter");
  if (rank == 0 || rank > std::min(layer.in, layer.out))
    throw lora::LoraError("lora rank " + std::to_string(rank) + " outside [1, " +
                          std::to_string(std::min(layer.in, layer.out)) + "] for " + layer.name);
  if (!(alpha > 0.0)) throw lora::LoraError("lora alpha must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw lora::LoraError("lora dropout must lie in [0, 1)");
  lora::LoraAdapter a;
  a.rank = rank;
  a.alpha = alpha;
  a.dropout = dropout;
  Tensor down({rank, layer.in});
  for (auto& v : down.values()) v = rng.normal(0.0, lora::kInitStd);
  a.up = store.add(layer.name + ".lora_up", Tensor({layer.out, rank}));
  a.down = store.add(layer.name + ".lora_down", std::move(down));
  layer.adapter = a;
}

Mat linear_forward(const ParamStore& store, const Linear& layer, ConstRef x, const ForwardContext& ctx,
                   LinearCache* cache) {
  const Tensor& w = store.value(layer.weight);
  Mat y;
  if (layer.bias) {
    const ConstRowRef b = row_view(store.value(*layer.bias));
    y = affine(x, w.mat(), &b);
  } else {
    y = affine(x, w.mat());
  }
  if (layer.adapter) y += lora::adapter_delta(store, *layer.adapter, x, ctx, cache ? &cache->adapter : nullptr);
  if (cache) cache->input = x;
  return y;
}

Mat linear_backward(ParamStore& store, const Linear& layer, const LinearCache& cache, ConstRef dy) {
  const auto w = store.value(layer.weight).mat();
  Mat dx(dy.rows(), w.cols());
  dx.noalias() = dy * w;
  if (!store.frozen(layer.weight)) store.grad(layer.weight).mat().noalias() += dy.transpose() * cache.input;
  if (layer.bias && !store.frozen(*layer.bias)) row_view(store.grad(*layer.bias)) += dy.colwise().sum();
  if (layer.adapter) dx += lora::adapter_backward(store, *layer.adapter, cache.adapter, dy);
  return dx;
}

Norm make_norm(ParamStore& store, const std::string& name, std::size_t dim, NormKind kind, double eps) {
  Norm n;
  n.kind = kind;
  n.eps = eps;
  n.gain = store.add(name + ".gain", Tensor({dim}, 1.0), /*decay=*/false);
  if (kind == NormKind::LayerNorm) n.bias = store.add(name + ".bias", Tensor({dim}), /*decay=*/false);
  return n;
}

Mat norm_forward(const ParamStore& store, const Norm& norm, ConstRef x, NormCache* cache) {
  const ConstRowRef gain = row_view(store.value(norm.gain));
  if (norm.bias) {
    const ConstRowRef bias = row_view(store.value(*norm.bias));
    return normalize(x, norm.kind, gain, &bias, norm.eps, cache);
  }
  return normalize(x, norm.kind, gain, nullptr, norm.eps, cache);
}

Mat norm_backward(ParamStore& store, const Norm& norm, const NormCache& cache, ConstRef dy) {
  NormGrads g = normalize_backward(cache, norm.kind, row_view(store.value(norm.gain)), dy);
  if (!store.frozen(norm.gain)) row_view(store.grad(norm.gain)) += g.dgain;
  if (norm.bias && !store.frozen(*norm.bias)) row_view(store.grad(*norm.bias)) += g.dbias;
  return std::move(g.dx);
}

FeedForward make_ffn(ParamStore& store, const std::string& name, FfnKind kind, std::size_t dim,
                     std::size_t hidden, Rng& rng, double init_std) {
  FeedForward f;
  f.kind = kind;
  const bool bias = kind == FfnKind::GeluMlp;
  f.w1 = make_linear(store, name + ".w1", dim, hidden, bias, rng, init_std);
  if (kind == FfnKind::SwiGlu) f.w3 = make_linear(store, name + ".w3", dim, hidden, false, rng, init_std);
  f.w2 = make_linear(store, name + ".w2", hidden, dim, bias, rng, init_std);
  return f;
}

Mat ffn_forward(const ParamStore& store, const FeedForward& ffn, ConstRef x, const ForwardContext& ctx,
                FfnCache* cache) {
  Mat pre1 = linear_forward(store, ffn.w1, x, ctx, cache ? &cache->c1 : nullptr);
  Mat hidden;
  Mat pre3;
  if (ffn.kind == FfnKind::GeluMlp) {
    hidden = activate(pre1, Activation::Gelu);
  } else {
    if (!ffn.w3) throw ShapeError("swiglu block without w3");
    pre3 = linear_forward(store, *ffn.w3, x, ctx, cache ? &cache->c3 : nullptr);
    hidden = activate(pre1, Activation::Silu).cwiseProduct(pre3);
  }
  Mat y = linear_forward(store, ffn.w2, hidden, ctx, cache ? &cache->c2 : nullptr);
  if (cache) {
    cache->pre1 = std::move(pre1);
    cache->pre3 = std::move(pre3);
  }
  return y;
}

Mat ffn_backward(ParamStore& store, const FeedForward& ffn, const FfnCache& cache, ConstRef dy) {
  const Mat dhidden = linear_backward(store, ffn.w2, cache.c2, dy);
  if (ffn.kind == FfnKind::GeluMlp) {
    return linear_backward(store, ffn.w1, cache.c1, activate_backward(cache.pre1, dhidden, Activation::Gelu));
  }
  const Mat gate = activate(cache.pre1, Activation::Silu);
  const Mat dpre3 = dhidden.cwiseProduct(gate);
  const Mat dgate = dhidden.cwiseProduct(cache.pre3);
  Mat dx = linear_backward(store, ffn.w1, cache.c1, activate_backward(cache.pre1, dgate, Activation::Silu));
  dx += linear_backward(store, *ffn.w3, cache.c3, dpre3);
  return dx;
}

}  // namespace canids::nn
