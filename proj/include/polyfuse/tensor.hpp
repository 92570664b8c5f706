#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace polyfuse {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes, axis lists or tensor orders are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major tensor of doubles (last index fastest).
///
/// An empty shape is an order-0 scalar holding exactly one element. Every
/// dimension must be positive, so `size() == product(shape())` always holds.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t order() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;
  std::size_t flat_index(std::span<const std::size_t> index) const;

  /// Scalar value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Row-major strides for `shape`.
std::vector<std::size_t> strides_of(const Shape& shape);

/// Reorders axes: result axis i is input axis `axes[i]`.
Tensor permute(const Tensor& t, std::span<const std::size_t> axes);

/// Sums products over paired axes. The result carries the free axes of `a`
/// followed by the free axes of `b`; contracting every axis yields a scalar.
Tensor contract(const Tensor& a, const Tensor& b,
                std::span<const std::size_t> axes_a,
                std::span<const std::size_t> axes_b);
Tensor contract(const Tensor& a, const Tensor& b,
                std::initializer_list<std::size_t> axes_a,
                std::initializer_list<std::size_t> axes_b);

/// Outer product of order-1 tensors; result[i1..in] = v1[i1] * ... * vn[in].
Tensor outer(std::span<const Tensor> vs);
Tensor outer(std::initializer_list<Tensor> vs);

/// Concatenation of order-1 tensors in argument order.
Tensor concat(std::span<const Tensor> vs);
Tensor concat(std::initializer_list<Tensor> vs);

/// Row-major matrix product of [m x k] and [k x n] buffers, accumulated into
/// `c` when `accumulate` is set. Shared by every dense kernel in the library.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool transpose_a = false, bool transpose_b = false,
          bool accumulate = false);

}  // namespace polyfuse
