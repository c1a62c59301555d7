#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace xvpr {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using ArrayX = Eigen::ArrayXd;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised for malformed or inconsistent input data (files, streams, manifests).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised for bad invocations: unknown config keys, invalid flag combinations.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape);

/// Dense row-major tensor of doubles backed by an Eigen array.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(ArrayX::Zero(numel(shape_))) {
    check_shape();
  }

  Tensor(Shape shape, ArrayX data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match " +
                                  std::to_string(data_.size()) + " values");
    check_shape();
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor from(Shape shape, std::initializer_list<double> values) {
    ArrayX d(static_cast<Index>(values.size()));
    Index i = 0;
    for (double v : values) d[i++] = v;
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return from({static_cast<Index>(values.size())}, values);
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  ArrayX& array() { return data_; }
  const ArrayX& array() const { return data_; }

  double operator[](Index i) const { return data_[i]; }
  double& operator[](Index i) { return data_[i]; }

  /// Row-major matrix view; tensor must have exactly rows*cols elements.
  Eigen::Map<MatrixRM> matrix(Index rows, Index cols) {
    if (rows * cols != size())
      throw std::invalid_argument("tensor: cannot view " + shape_str(shape_) + " as " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    return Eigen::Map<MatrixRM>(data_.data(), rows, cols);
  }
  Eigen::Map<const MatrixRM> matrix(Index rows, Index cols) const {
    if (rows * cols != size())
      throw std::invalid_argument("tensor: cannot view " + shape_str(shape_) + " as " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    return Eigen::Map<const MatrixRM>(data_.data(), rows, cols);
  }

  bool all_finite() const { return data_.isFinite().all(); }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw std::invalid_argument("tensor: reshape " + shape_str(shape_) + " -> " +
                                  shape_str(shape) + " changes element count");
    return Tensor(std::move(shape), data_);
  }

 private:
  void check_shape() const {
    for (Index d : shape_)
      if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension in " + shape_str(shape_));
  }

  Shape shape_;
  ArrayX data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

/// A learnable tensor. The gradient persists across backward passes and
/// accumulates until reset_gradient() is called.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor gradient;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), gradient(Tensor::zeros(value.shape())) {}

  void reset_gradient() { gradient.array().setZero(); }
};

}  // namespace xvpr
