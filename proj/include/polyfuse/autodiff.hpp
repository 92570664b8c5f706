#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyfuse/tensor.hpp"

namespace polyfuse {

/// A learned tensor together with its accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;
};

/// Named parameters with stable addresses, iterated in insertion order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t size() const noexcept { return order_.size(); }
  /// Number of scalar entries over every parameter.
  std::size_t total_entries() const;
  void zero_grad();

 private:
  std::map<std::string, Parameter> params_;
  std::vector<std::string> order_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of primitive operations for reverse-mode differentiation.
///
/// Nodes are created in evaluation order, so node ids are already a
/// topological order and `backward` simply walks them in reverse.
class Tape {
 public:
  /// Called with the node's output gradient; adds contributions to inputs.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf bound to `p` by reference; gradients are added to `p.grad` on backward.
  Var parameter(Parameter& p);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer for `v`, zero-initialized on first use; nullptr when
  /// `v` does not require a gradient.
  Tensor* grad_target(const Var& v);
  /// Gradient of `v` after backward; zeros if nothing reached it.
  Tensor grad(const Var& v) const;

  void backward(const Var& loss);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor own;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* sink = nullptr;
    Backward backward;
  };

  Var push(Node node);
  std::deque<Node> nodes_;
};

/// Raised when a gradient check meets a non-finite intermediate value.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ScalarFunction = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of `f` against central finite differences
/// over every coordinate of `params`. The error per coordinate is
/// |analytic - numeric| / max(1, |analytic|). `f` must bind the parameters
/// through `Tape::parameter` so perturbations are visible to it.
GradCheckResult grad_check(const ScalarFunction& f, std::span<Parameter* const> params,
                           double eps = 1e-5);

// Differentiable primitives shared by the layers.

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var sum(const Var& a);
Var matmul(const Var& a, const Var& b);
Var reshape(const Var& a, Shape shape);
/// Elementwise integer power.
Var power(const Var& a, int exponent);
/// [N, d_i] blocks joined along the feature axis.
Var concat_columns(std::span<const Var> blocks);
/// Per-row outer product of [N, d_i] inputs, flattened to [N, prod d_i].
/// Repeating the same Var accumulates its gradient over every position.
Var row_outer(std::span<const Var> factors);
/// y[n, o] = sum_r w[r] * p[n, r, o].
Var rank_mix(const Var& projections, const Var& weights);

}  // namespace polyfuse
