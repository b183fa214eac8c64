#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace canids::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major tensor of rank 1..3 in double precision. Matrix views fold
// all leading dimensions into rows and keep the last one as columns.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0)
      : Tensor(std::vector<std::size_t>(shape), fill) {}
  static Tensor from_matrix(const Mat& m);
  static Tensor vector(std::span<const double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  MatMap mat();
  ConstMatMap mat() const;

  void fill(double v);
  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  // Aligned like Eigen's own heap matrices so vectorized reductions over a
  // tensor never depend on where the allocator placed it.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

// Trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;
  bool decay = true;  // false for biases and normalization gains
};

using ParamId = std::size_t;

// Owns every parameter of a model. Layers refer to entries by ParamId so that
// a model is an ordinary copyable value.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor value, bool decay = true);
  Param& operator[](ParamId id) { return params_.at(id); }
  const Param& operator[](ParamId id) const { return params_.at(id); }
  const Tensor& value(ParamId id) const { return params_[id].value; }
  Tensor& grad(ParamId id) { return params_[id].grad; }
  bool frozen(ParamId id) const { return params_[id].frozen; }

  std::size_t size() const { return params_.size(); }
  bool contains(const std::string& name) const { return index_.contains(name); }
  ParamId find(const std::string& name) const;

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

  void zero_grad();
  std::size_t element_count() const;
  std::size_t trainable_count() const;

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, ParamId> index_;
};

}  // namespace canids::nn
