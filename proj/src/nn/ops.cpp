#include "canids/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace canids::nn {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

}  // namespace

Mat affine(ConstRef x, ConstRef w, const ConstRowRef* bias) {
  require(x.cols() == w.cols(), "affine: input width " + std::to_string(x.cols()) +
                                    " does not match weight (" + std::to_string(w.rows()) + "x" +
                                    std::to_string(w.cols()) + ")");
  Mat y(x.rows(), w.rows());
  y.noalias() = x * w.transpose();
  if (bias) {
    require(bias->size() == w.rows(), "affine: bias length mismatch");
    y.rowwise() += *bias;
  }
  return y;
}

AffineGrads affine_backward(ConstRef x, ConstRef w, ConstRef dy) {
  require(dy.rows() == x.rows() && dy.cols() == w.rows() && x.cols() == w.cols(),
          "affine_backward: shape mismatch");
  AffineGrads g;
  g.dx.noalias() = dy * w;
  g.dw.noalias() = dy.transpose() * x;
  g.db = dy.colwise().sum();
  return g;
}

Mat softmax(ConstRef logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Mat softmax_backward(ConstRef probs, ConstRef dprobs) {
  require(probs.rows() == dprobs.rows() && probs.cols() == dprobs.cols(),
          "softmax_backward: shape mismatch");
  Mat dx(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double dot = probs.row(r).dot(dprobs.row(r));
    dx.row(r) = probs.row(r).array() * (dprobs.row(r).array() - dot);
  }
  return dx;
}

double log_sum_exp(ConstRowRef row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

Mat normalize(ConstRef x, NormKind kind, ConstRowRef gain, const ConstRowRef* bias, double eps,
              NormCache* cache) {
  require(x.cols() >= 1, "normalize: feature dimension must be >= 1");
  require(gain.size() == x.cols(), "normalize: gain length mismatch");
  if (bias) require(bias->size() == x.cols(), "normalize: bias length mismatch");
  const auto n = static_cast<double>(x.cols());
  Mat xhat(x.rows(), x.cols());
  Eigen::VectorXd inv(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (kind == NormKind::LayerNorm) {
      const double mean = x.row(r).mean();
      const auto centered = (x.row(r).array() - mean).eval();
      const double var = centered.square().sum() / n;
      inv(r) = 1.0 / std::sqrt(var + eps);
      xhat.row(r) = centered * inv(r);
    } else {
      const double ms = x.row(r).squaredNorm() / n;
      inv(r) = 1.0 / std::sqrt(ms + eps);
      xhat.row(r) = x.row(r) * inv(r);
    }
  }
  Mat y = xhat.array().rowwise() * gain.array();
  if (bias && kind == NormKind::LayerNorm) y.rowwise() += *bias;
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_scale = std::move(inv);
  }
  return y;
}

NormGrads normalize_backward(const NormCache& cache, NormKind kind, ConstRowRef gain, ConstRef dy) {
  require(dy.rows() == cache.xhat.rows() && dy.cols() == cache.xhat.cols(),
          "normalize_backward: shape mismatch");
  NormGrads g;
  g.dgain = (dy.array() * cache.xhat.array()).colwise().sum();
  g.dbias = dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gain.array();
  g.dx.resize(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double proj = dxhat.row(r).dot(cache.xhat.row(r)) / static_cast<double>(dy.cols());
    if (kind == NormKind::LayerNorm) {
      const double mean = dxhat.row(r).mean();
      g.dx.row(r) =
          (dxhat.row(r).array() - mean - cache.xhat.row(r).array() * proj) * cache.inv_scale(r);
    } else {
      g.dx.row(r) = (dxhat.row(r).array() - cache.xhat.row(r).array() * proj) * cache.inv_scale(r);
    }
  }
  return g;
}

namespace {

struct HeadLayout {
  Eigen::Index head_dim;
  int group;  // query heads per kv head
};

HeadLayout check_heads(ConstRef q, ConstRef k, ConstRef v, int n_heads, int n_kv_heads) {
  require(n_heads > 0 && n_kv_heads > 0, "attention: head counts must be positive");
  require(n_heads % n_kv_heads == 0, "attention: n_kv_heads must divide n_heads");
  require(q.cols() % n_heads == 0, "attention: head count must divide query width");
  const Eigen::Index d = q.cols() / n_heads;
  require(k.cols() == d * n_kv_heads && v.cols() == d * n_kv_heads,
          "attention: key/value width must equal n_kv_heads * head_dim");
  require(k.rows() == v.rows(), "attention: key and value lengths differ");
  require(k.rows() > 0 && q.rows() > 0, "attention: empty sequence");
  return {d, n_heads / n_kv_heads};
}

// Number of visible keys for query row i; the visible set is always a prefix.
Eigen::Index visible_keys(const AttentionMask& mask, Eigen::Index row, Eigen::Index n_keys) {
  std::size_t limit = std::min<std::size_t>(mask.key_length, static_cast<std::size_t>(n_keys));
  if (mask.causal) limit = std::min(limit, mask.query_offset + static_cast<std::size_t>(row) + 1);
  return static_cast<Eigen::Index>(limit);
}

}  // namespace

Mat attention(ConstRef q, ConstRef k, ConstRef v, const AttentionMask& mask, int n_heads,
              int n_kv_heads, AttentionCache* cache) {
  const auto [d, group] = check_heads(q, k, v, n_heads, n_kv_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Eigen::Index nq = q.rows(), nk = k.rows();
  Mat ctx = Mat::Zero(nq, q.cols());
  if (cache) cache->probs.assign(static_cast<std::size_t>(n_heads), Mat());
  for (int h = 0; h < n_heads; ++h) {
    const int g = h / group;
    Mat scores(nq, nk);
    scores.noalias() = q.middleCols(h * d, d) * k.middleCols(g * d, d).transpose();
    scores *= scale;
    for (Eigen::Index i = 0; i < nq; ++i) {
      const Eigen::Index limit = visible_keys(mask, i, nk);
      require(limit > 0, "attention: query row has no visible keys");
      auto row = scores.row(i);
      const double m = row.head(limit).maxCoeff();
      row.head(limit) = (row.head(limit).array() - m).exp();
      row.head(limit) /= row.head(limit).sum();
      row.tail(nk - limit).setZero();  // exp(-inf)
    }
    ctx.middleCols(h * d, d).noalias() = scores * v.middleCols(g * d, d);
    if (cache) cache->probs[static_cast<std::size_t>(h)] = std::move(scores);
  }
  return ctx;
}

AttentionGrads attention_backward(ConstRef q, ConstRef k, ConstRef v, const AttentionCache& cache,
                                  ConstRef dctx, int n_heads, int n_kv_heads) {
  const auto [d, group] = check_heads(q, k, v, n_heads, n_kv_heads);
  require(cache.probs.size() == static_cast<std::size_t>(n_heads), "attention_backward: missing cache");
  require(dctx.rows() == q.rows() && dctx.cols() == q.cols(), "attention_backward: shape mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionGrads g;
  g.dq = Mat::Zero(q.rows(), q.cols());
  g.dk = Mat::Zero(k.rows(), k.cols());
  g.dv = Mat::Zero(v.rows(), v.cols());
  for (int h = 0; h < n_heads; ++h) {
    const int kv = h / group;
    const Mat& p = cache.probs[static_cast<std::size_t>(h)];
    const auto dout = dctx.middleCols(h * d, d);
    g.dv.middleCols(kv * d, d).noalias() += p.transpose() * dout;
    Mat dp(p.rows(), p.cols());
    dp.noalias() = dout * v.middleCols(kv * d, d).transpose();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double dot = p.row(i).dot(dp.row(i));
      dp.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
    }
    dp *= scale;
    g.dq.middleCols(h * d, d).noalias() = dp * k.middleCols(kv * d, d);
    g.dk.middleCols(kv * d, d).noalias() += dp.transpose() * q.middleCols(h * d, d);
  }
  return g;
}

void rope_apply(std::span<double> vec, double position, double base) {
  if (vec.size() % 2 != 0) throw ShapeError("rope: head dimension must be even");
  const double d = static_cast<double>(vec.size());
  for (std::size_t i = 0; i < vec.size() / 2; ++i) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(i) / d);
    const double c = std::cos(position * theta), s = std::sin(position * theta);
    const double a = vec[2 * i], b = vec[2 * i + 1];
    vec[2 * i] = a * c - b * s;
    vec[2 * i + 1] = a * s + b * c;
  }
}

void rope_rows(Eigen::Ref<Mat> x, int n_heads, std::span<const std::size_t> positions, double base,
               bool inverse) {
  require(n_heads > 0 && x.cols() % n_heads == 0, "rope: head count must divide width");
  require(positions.size() == static_cast<std::size_t>(x.rows()), "rope: one position per row");
  const Eigen::Index d = x.cols() / n_heads;
  if (d % 2 != 0) throw ShapeError("rope: head dimension must be even");
  const double sign = inverse ? -1.0 : 1.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double pos = sign * static_cast<double>(positions[static_cast<std::size_t>(r)]);
    double* row = x.row(r).data();
    for (int h = 0; h < n_heads; ++h)
      rope_apply(std::span<double>(row + h * d, static_cast<std::size_t>(d)), pos, base);
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

Mat activate(ConstRef x, Activation act) {
  switch (act) {
    case Activation::Tanh: return x.array().tanh().matrix();
    case Activation::Silu: return x.unaryExpr([](double v) { return silu(v); });
    case Activation::Gelu: return x.unaryExpr([](double v) { return gelu(v); });
  }
  return x;
}

Mat activate_backward(ConstRef pre, ConstRef dy, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return (dy.array() * (1.0 - pre.array().tanh().square())).matrix();
    case Activation::Silu:
      return (dy.array() * pre.unaryExpr([](double v) { return silu_grad(v); }).array()).matrix();
    case Activation::Gelu:
      return (dy.array() * pre.unaryExpr([](double v) { return gelu_grad(v); }).array()).matrix();
  }
  return dy;
}

}  // namespace canids::nn
