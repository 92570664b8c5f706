#include "polyfuse/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace polyfuse {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const RowMatrix>;
using MapMut = Eigen::Map<RowMatrix>;

void check_dims(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

void check_axes(const Tensor& t, std::span<const std::size_t> axes, const char* which) {
  std::vector<bool> seen(t.order(), false);
  for (std::size_t ax : axes) {
    if (ax >= t.order()) {
      throw ShapeError(std::string("contract: axis ") + std::to_string(ax) + " out of range for " +
                       which + " with shape " + shape_string(t.shape()));
    }
    if (seen[ax]) {
      throw ShapeError(std::string("contract: duplicate axis ") + std::to_string(ax) + " in " + which);
    }
    seen[ax] = true;
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index of order " + std::to_string(index.size()) + " for tensor of shape " +
                     shape_string(shape_));
  }
  std::size_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) throw ShapeError("index out of range for shape " + shape_string(shape_));
    flat = flat * shape_[i] + index[i];
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(std::span<const std::size_t>(index.begin(), index.size()))];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(std::span<const std::size_t>(index.begin(), index.size()))];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor permute(const Tensor& t, std::span<const std::size_t> axes) {
  const std::size_t n = t.order();
  if (axes.size() != n) throw ShapeError("permute: axis list length differs from order");
  std::vector<bool> seen(n, false);
  for (std::size_t ax : axes) {
    if (ax >= n || seen[ax]) throw ShapeError("permute: invalid axis permutation");
    seen[ax] = true;
  }
  bool identity = true;
  for (std::size_t i = 0; i < n; ++i) identity = identity && axes[i] == i;
  if (identity) return t;

  Shape out_shape(n);
  for (std::size_t i = 0; i < n; ++i) out_shape[i] = t.shape()[axes[i]];
  const auto in_strides = strides_of(t.shape());
  std::vector<std::size_t> step(n);
  for (std::size_t i = 0; i < n; ++i) step[i] = in_strides[axes[i]];

  Tensor out(out_shape);
  std::vector<std::size_t> idx(n, 0);
  std::size_t src = 0;
  const double* in = t.raw();
  double* dst = out.raw();
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    dst[flat] = in[src];
    for (std::size_t ax = n; ax-- > 0;) {
      ++idx[ax];
      src += step[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= step[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

Tensor contract(const Tensor& a, const Tensor& b, std::span<const std::size_t> axes_a,
                std::span<const std::size_t> axes_b) {
  if (axes_a.size() != axes_b.size()) {
    throw ShapeError("contract: axis lists differ in length for shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  check_axes(a, axes_a, "a");
  check_axes(b, axes_b, "b");
  for (std::size_t i = 0; i < axes_a.size(); ++i) {
    if (a.shape()[axes_a[i]] != b.shape()[axes_b[i]]) {
      throw ShapeError("contract: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                       " disagree on axis pair (" + std::to_string(axes_a[i]) + ", " +
                       std::to_string(axes_b[i]) + ")");
    }
  }

  std::vector<std::size_t> perm_a, perm_b;
  Shape out_shape;
  std::size_t m = 1, n = 1, k = 1;
  for (std::size_t ax = 0; ax < a.order(); ++ax) {
    if (std::find(axes_a.begin(), axes_a.end(), ax) == axes_a.end()) {
      perm_a.push_back(ax);
      out_shape.push_back(a.shape()[ax]);
      m *= a.shape()[ax];
    }
  }
  for (std::size_t ax : axes_a) {
    perm_a.push_back(ax);
    k *= a.shape()[ax];
  }
  for (std::size_t ax : axes_b) perm_b.push_back(ax);
  for (std::size_t ax = 0; ax < b.order(); ++ax) {
    if (std::find(axes_b.begin(), axes_b.end(), ax) == axes_b.end()) {
      perm_b.push_back(ax);
      out_shape.push_back(b.shape()[ax]);
      n *= b.shape()[ax];
    }
  }

  const Tensor pa = permute(a, perm_a);
  const Tensor pb = permute(b, perm_b);
  Tensor out(out_shape);
  gemm(pa.raw(), pb.raw(), out.raw(), m, k, n);
  return out;
}

Tensor contract(const Tensor& a, const Tensor& b, std::initializer_list<std::size_t> axes_a,
                std::initializer_list<std::size_t> axes_b) {
  return contract(a, b, std::span<const std::size_t>(axes_a.begin(), axes_a.size()),
                  std::span<const std::size_t>(axes_b.begin(), axes_b.size()));
}

Tensor outer(std::span<const Tensor> vs) {
  if (vs.empty()) throw ShapeError("outer: empty input list");
  Shape shape;
  for (const Tensor& v : vs) {
    if (v.order() != 1) throw ShapeError("outer: inputs must be order-1, got " + shape_string(v.shape()));
    shape.push_back(v.size());
  }
  std::vector<double> acc(vs[0].data().begin(), vs[0].data().end());
  for (std::size_t i = 1; i < vs.size(); ++i) {
    const auto v = vs[i].data();
    std::vector<double> next(acc.size() * v.size());
    for (std::size_t p = 0; p < acc.size(); ++p) {
      for (std::size_t q = 0; q < v.size(); ++q) next[p * v.size() + q] = acc[p] * v[q];
    }
    acc = std::move(next);
  }
  return Tensor(std::move(shape), std::move(acc));
}

Tensor outer(std::initializer_list<Tensor> vs) {
  return outer(std::span<const Tensor>(vs.begin(), vs.size()));
}

Tensor concat(std::span<const Tensor> vs) {
  if (vs.empty()) throw ShapeError("concat: empty input list");
  std::vector<double> out;
  for (const Tensor& v : vs) {
    if (v.order() != 1) throw ShapeError("concat: inputs must be order-1, got " + shape_string(v.shape()));
    out.insert(out.end(), v.data().begin(), v.data().end());
  }
  return Tensor::vector(std::move(out));
}

Tensor concat(std::initializer_list<Tensor> vs) {
  return concat(std::span<const Tensor>(vs.begin(), vs.size()));
}

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool transpose_a, bool transpose_b, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  MapMut C(c, M, N);
  if (!accumulate) C.setZero();
  if (!transpose_a && !transpose_b) {
    C.noalias() += MapConst(a, M, K) * MapConst(b, K, N);
  } else if (transpose_a && !transpose_b) {
    C.noalias() += MapConst(a, K, M).transpose() * MapConst(b, K, N);
  } else if (!transpose_a && transpose_b) {
    C.noalias() += MapConst(a, M, K) * MapConst(b, N, K).transpose();
  } else {
    C.noalias() += MapConst(a, K, M).transpose() * MapConst(b, N, K).transpose();
  }
}

}  // namespace polyfuse
