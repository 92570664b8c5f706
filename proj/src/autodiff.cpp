#include "polyfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace polyfuse {

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor grad(value.shape(), 0.0);
  auto [it, _] = params_.emplace(name, Parameter{std::move(value), std::move(grad)});
  order_.push_back(name);
  return it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::total_entries() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) {
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0);
    else p.grad.fill(0.0);
  }
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.own = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.requires_grad = true;
  n.sink = &p;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.own = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw std::logic_error("operation mixes Vars from different tapes");
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.own;
}

Tensor* Tape::grad_target(const Var& v) {
  Node& n = nodes_.at(v.id_);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(value(v.id_).shape(), 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_.at(v.id_);
  if (n.has_grad) return n.grad;
  return Tensor(value(v.id_).shape(), 0.0);
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw std::logic_error("backward: loss belongs to another tape");
  if (value(loss.id_).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(value(loss.id_).shape()));
  }
  if (Tensor* seed = grad_target(loss)) seed->fill(1.0);

  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.sink || !n.has_grad) continue;
    Tensor& g = n.sink->grad;
    if (g.shape() != n.grad.shape()) g = Tensor(n.grad.shape(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double evaluate_scalar(const ScalarFunction& f, std::size_t param, std::size_t index) {
  Tape tape;
  const double v = f(tape).value().item();
  if (!std::isfinite(v)) {
    throw NonFiniteError("grad_check: non-finite loss at parameter " + std::to_string(param) +
                         ", coordinate " + std::to_string(index));
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, std::span<Parameter* const> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  std::vector<Tensor> analytic;
  {
    for (Parameter* p : params) p->grad = Tensor(p->value.shape(), 0.0);
    Tape tape;
    Var loss = f(tape);
    if (!loss.value().all_finite()) throw NonFiniteError("grad_check: non-finite loss at the base point");
    tape.backward(loss);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      const Tensor& g = params[pi]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
          throw NonFiniteError("grad_check: non-finite gradient at parameter " + std::to_string(pi) +
                               ", coordinate " + std::to_string(i));
        }
      }
      analytic.push_back(g);
    }
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = value[i];
      value[i] = original + eps;
      const double plus = evaluate_scalar(f, pi, i);
      value[i] = original - eps;
      const double minus = evaluate_scalar(f, pi, i);
      value[i] = original;

      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > result.max_error) result = {err, pi, i};
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  add_into(out, b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& gy) {
    if (Tensor* ga = t.grad_target(a)) add_into(*ga, gy);
    if (Tensor* gb = t.grad_target(b)) add_into(*gb, gy);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& gy) {
    if (Tensor* ga = t.grad_target(a)) {
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * bv[i];
    }
    if (Tensor* gb = t.grad_target(b)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape()->record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& gy) {
    if (Tensor* ga = t.grad_target(a)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += factor * gy[i];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& gy) {
    if (Tensor* ga = t.grad_target(a)) {
      const double g = gy.item();
      for (double& v : ga->data()) v += g;
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.order() != 2 || bv.order() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  gemm(av.raw(), bv.raw(), out.raw(), m, k, n);
  return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& gy) {
    if (Tensor* ga = t.grad_target(a)) gemm(gy.raw(), b.value().raw(), ga->raw(), m, n, k, false, true, true);
    if (Tensor* gb = t.grad_target(b)) gemm(a.value().raw(), gy.raw(), gb->raw(), k, m, n, true, false, true);
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor& gy) {
    if (Tensor* ga = t.grad_target(a)) add_into(*ga, gy);
  });
}

Var power(const Var& a, int exponent) {
  if (exponent < 1) throw std::invalid_argument("power: exponent must be >= 1");
  Tensor out = a.value();
  for (double& v : out.data()) {
    const double base = v;
    for (int e = 1; e < exponent; ++e) v *= base;
  }
  return a.tape()->record(std::move(out), {a}, [a, exponent](Tape& t, const Tensor& gy) {
    if (Tensor* ga = t.grad_target(a)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        double d = static_cast<double>(exponent);
        for (int e = 1; e < exponent; ++e) d *= av[i];
        (*ga)[i] += d * gy[i];
      }
    }
  });
}

Var concat_columns(std::span<const Var> blocks) {
  if (blocks.empty()) throw ShapeError("concat_columns: empty input list");
  const std::size_t rows = blocks[0].shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& b : blocks) {
    if (b.value().order() != 2 || b.shape()[0] != rows) {
      throw ShapeError("concat_columns: expected [" + std::to_string(rows) + ", d] blocks, got " +
                       shape_string(b.shape()));
    }
    widths.push_back(b.shape()[1]);
    total += b.shape()[1];
  }
  Tensor out(Shape{rows, total});
  for (std::size_t n = 0; n < rows; ++n) {
    std::size_t col = 0;
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      const double* src = blocks[j].value().raw() + n * widths[j];
      std::copy(src, src + widths[j], out.raw() + n * total + col);
      col += widths[j];
    }
  }
  std::vector<Var> inputs(blocks.begin(), blocks.end());
  return blocks[0].tape()->record(std::move(out), blocks, [inputs, widths, rows, total](Tape& t, const Tensor& gy) {
    std::size_t col = 0;
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      if (Tensor* g = t.grad_target(inputs[j])) {
        for (std::size_t n = 0; n < rows; ++n) {
          for (std::size_t c = 0; c < widths[j]; ++c) (*g)[n * widths[j] + c] += gy[n * total + col + c];
        }
      }
      col += widths[j];
    }
  });
}

Var row_outer(std::span<const Var> factors) {
  if (factors.empty()) throw ShapeError("row_outer: empty input list");
  const std::size_t rows = factors[0].shape().at(0);
  std::vector<std::size_t> dims;
  std::size_t width = 1;
  for (const Var& f : factors) {
    if (f.value().order() != 2 || f.shape()[0] != rows) {
      throw ShapeError("row_outer: expected [" + std::to_string(rows) + ", d] inputs, got " +
                       shape_string(f.shape()));
    }
    dims.push_back(f.shape()[1]);
    width *= f.shape()[1];
  }
  Tensor out(Shape{rows, width});
  for (std::size_t n = 0; n < rows; ++n) {
    double* dst = out.raw() + n * width;
    std::size_t filled = 1;
    dst[0] = 1.0;
    for (std::size_t j = 0; j < factors.size(); ++j) {
      const double* z = factors[j].value().raw() + n * dims[j];
      // expand in place from the back so earlier entries are read before being overwritten
      for (std::size_t p = filled; p-- > 0;) {
        const double base = dst[p];
        for (std::size_t q = dims[j]; q-- > 0;) dst[p * dims[j] + q] = base * z[q];
      }
      filled *= dims[j];
    }
  }
  std::vector<Var> inputs(factors.begin(), factors.end());
  return factors[0].tape()->record(std::move(out), factors, [inputs, dims, rows, width](Tape& t, const Tensor& gy) {
    const std::size_t k = inputs.size();
    std::vector<Tensor*> targets(k);
    bool any = false;
    for (std::size_t j = 0; j < k; ++j) {
      targets[j] = t.grad_target(inputs[j]);
      any = any || targets[j];
    }
    if (!any) return;
    std::vector<std::size_t> idx(k);
    std::vector<double> prefix(k + 1), suffix(k + 1);
    for (std::size_t n = 0; n < rows; ++n) {
      std::fill(idx.begin(), idx.end(), 0);
      for (std::size_t flat = 0; flat < width; ++flat) {
        const double g = gy[n * width + flat];
        if (g != 0.0) {
          prefix[0] = 1.0;
          for (std::size_t j = 0; j < k; ++j) prefix[j + 1] = prefix[j] * inputs[j].value()[n * dims[j] + idx[j]];
          suffix[k] = 1.0;
          for (std::size_t j = k; j-- > 0;) suffix[j] = suffix[j + 1] * inputs[j].value()[n * dims[j] + idx[j]];
          for (std::size_t j = 0; j < k; ++j) {
            if (targets[j]) (*targets[j])[n * dims[j] + idx[j]] += g * prefix[j] * suffix[j + 1];
          }
        }
        for (std::size_t j = k; j-- > 0;) {
          if (++idx[j] < dims[j]) break;
          idx[j] = 0;
        }
      }
    }
  });
}

Var rank_mix(const Var& projections, const Var& weights) {
  const Tensor& p = projections.value();
  const Tensor& w = weights.value();
  if (p.order() != 3 || w.order() != 1 || w.size() != p.dim(1)) {
    throw ShapeError("rank_mix: projections " + shape_string(p.shape()) + " incompatible with weights " +
                     shape_string(w.shape()));
  }
  const std::size_t rows = p.dim(0), rank = p.dim(1), outs = p.dim(2);
  Tensor out(Shape{rows, outs});
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t r = 0; r < rank; ++r) {
      const double wr = w[r];
      const double* src = p.raw() + (n * rank + r) * outs;
      double* dst = out.raw() + n * outs;
      for (std::size_t o = 0; o < outs; ++o) dst[o] += wr * src[o];
    }
  }
  return projections.tape()->record(
      std::move(out), {projections, weights}, [projections, weights, rows, rank, outs](Tape& t, const Tensor& gy) {
        if (Tensor* gp = t.grad_target(projections)) {
          const Tensor& w = weights.value();
          for (std::size_t n = 0; n < rows; ++n) {
            for (std::size_t r = 0; r < rank; ++r) {
              double* dst = gp->raw() + (n * rank + r) * outs;
              for (std::size_t o = 0; o < outs; ++o) dst[o] += w[r] * gy[n * outs + o];
            }
          }
        }
        if (Tensor* gw = t.grad_target(weights)) {
          const Tensor& p = projections.value();
          for (std::size_t n = 0; n < rows; ++n) {
            for (std::size_t r = 0; r < rank; ++r) {
              const double* src = p.raw() + (n * rank + r) * outs;
              double acc = 0.0;
              for (std::size_t o = 0; o < outs; ++o) acc += src[o] * gy[n * outs + o];
              (*gw)[r] += acc;
            }
          }
        }
      });
}

}  // namespace polyfuse
