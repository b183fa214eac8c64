#include "canids/nn/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace canids::nn {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 3) throw ShapeError("tensor rank must be 1..3");
  const std::size_t n =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  data_.assign(n, fill);
}

Tensor Tensor::from_matrix(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.mat() = m;
  return t;
}

Tensor Tensor::vector(std::span<const double> values) {
  Tensor t({values.size()});
  std::copy(values.begin(), values.end(), t.data_.begin());
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

MatMap Tensor::mat() {
  return MatMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

ConstMatMap Tensor::mat() const {
  return ConstMatMap(data_.data(), static_cast<Eigen::Index>(rows()),
                     static_cast<Eigen::Index>(cols()));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_string() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
  return s + ")";
}

ParamId ParamStore::add(std::string name, Tensor value, bool decay) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  const ParamId id = params_.size();
  Param p;
  p.grad = Tensor(value.shape());
  p.value = std::move(value);
  p.name = name;
  p.decay = decay;
  index_.emplace(std::move(name), id);
  params_.push_back(std::move(p));
  return id;
}

ParamId ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (!p.frozen) n += p.value.size();
  return n;
}

}  // namespace canids::nn
