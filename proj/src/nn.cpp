#include "polyfuse/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace polyfuse::nn {

std::size_t Conv1dSpec::output_length(std::size_t input_length) const {
  if (stride == 0 || filter == 0) throw GeometryError(name + ": filter and stride must be positive");
  const std::size_t padded = input_length + 2 * padding;
  if (padded < filter) {
    throw GeometryError(name + ": infeasible geometry, input length " + std::to_string(input_length) +
                        " (padding " + std::to_string(padding) + ") is shorter than filter " +
                        std::to_string(filter));
  }
  return (padded - filter) / stride + 1;
}

namespace {

Tensor as_batch(const Tensor& x, std::size_t unbatched_order) {
  if (x.order() == unbatched_order) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return x.reshaped(std::move(s));
  }
  return x;
}

Tensor drop_batch(const Tensor& y) {
  Shape s(y.shape().begin() + 1, y.shape().end());
  return y.reshaped(std::move(s));
}

// col[(c * F + k), t] = x[c, t * stride + k - padding], zero outside the signal.
void im2col(const double* x, std::size_t channels, std::size_t length, const Conv1dSpec& s, std::size_t out_len,
            double* col) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < s.filter; ++k) {
      double* row = col + (c * s.filter + k) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * s.stride + k) - static_cast<std::ptrdiff_t>(s.padding);
        row[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) ? x[c * length + pos] : 0.0;
      }
    }
  }
}

void col2im_add(const double* col, std::size_t channels, std::size_t length, const Conv1dSpec& s,
                std::size_t out_len, double* dx) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < s.filter; ++k) {
      const double* row = col + (c * s.filter + k) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * s.stride + k) - static_cast<std::ptrdiff_t>(s.padding);
        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) dx[c * length + pos] += row[t];
      }
    }
  }
}

struct ConvGeometry {
  std::size_t batch, channels, length, out_len;
};

ConvGeometry check_conv(const Tensor& x, const Conv1dSpec& spec, const Tensor& w, const Tensor& b) {
  if (x.order() != 3) throw ShapeError(spec.name + ": expected [N, C, T] input, got " + shape_string(x.shape()));
  if (x.dim(1) != spec.in_channels) {
    throw ShapeError(spec.name + ": input has " + std::to_string(x.dim(1)) + " channels, layer expects " +
                     std::to_string(spec.in_channels));
  }
  if (w.shape() != Shape{spec.out_channels, spec.in_channels, spec.filter}) {
    throw ShapeError(spec.name + ": weight shape " + shape_string(w.shape()) + " does not match layer");
  }
  if (b.shape() != Shape{spec.out_channels}) {
    throw ShapeError(spec.name + ": bias shape " + shape_string(b.shape()) + " does not match layer");
  }
  return {x.dim(0), x.dim(1), x.dim(2), spec.output_length(x.dim(2))};
}

Tensor conv_forward_impl(const Tensor& x, const Conv1dSpec& spec, const Tensor& w, const Tensor& b,
                         std::vector<double>* saved_cols) {
  const ConvGeometry g = check_conv(x, spec, w, b);
  const std::size_t ck = g.channels * spec.filter;
  const std::size_t col_size = ck * g.out_len;
  Tensor y(Shape{g.batch, spec.out_channels, g.out_len});
  std::vector<double> local;
  std::vector<double>& cols = saved_cols ? *saved_cols : local;
  cols.resize(saved_cols ? g.batch * col_size : col_size);
  for (std::size_t n = 0; n < g.batch; ++n) {
    double* col = cols.data() + (saved_cols ? n * col_size : 0);
    im2col(x.raw() + n * g.channels * g.length, g.channels, g.length, spec, g.out_len, col);
    double* out = y.raw() + n * spec.out_channels * g.out_len;
    gemm(w.raw(), col, out, spec.out_channels, ck, g.out_len);
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      for (std::size_t t = 0; t < g.out_len; ++t) out[o * g.out_len + t] += b[o];
    }
  }
  return y;
}

struct BnSaved {
  std::vector<double> inv_std;
  Tensor normalized;
};

// x viewed as [N, C, T]; T == 1 for [N, C] inputs.
void bn_dims(const Tensor& x, std::size_t& n, std::size_t& c, std::size_t& t) {
  if (x.order() == 2) {
    n = x.dim(0), c = x.dim(1), t = 1;
  } else if (x.order() == 3) {
    n = x.dim(0), c = x.dim(1), t = x.dim(2);
  } else {
    throw ShapeError("batch_norm: expected [N, C] or [N, C, T], got " + shape_string(x.shape()));
  }
}

Tensor bn_forward_impl(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                       BnSaved& saved) {
  std::size_t N, C, T;
  bn_dims(x, N, C, T);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C} || state.running_mean.shape() != Shape{C} ||
      state.running_var.shape() != Shape{C}) {
    throw ShapeError("batch_norm: parameter shapes do not match " + std::to_string(C) + " channels");
  }
  if (mode == Mode::Train && N < 2) {
    throw std::invalid_argument("batch_norm: training mode needs a batch of at least 2 samples");
  }
  const double count = static_cast<double>(N * T);
  saved.inv_std.assign(C, 0.0);
  saved.normalized = Tensor(x.shape());
  Tensor y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < T; ++i) s += x[(n * C + c) * T + i];
      mean = s / count;
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < T; ++i) {
          const double d = x[(n * C + c) * T + i] - mean;
          ss += d * d;
        }
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1.0) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + state.eps);
    saved.inv_std[c] = inv;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < T; ++i) {
        const std::size_t idx = (n * C + c) * T + i;
        const double xh = (x[idx] - mean) * inv;
        saved.normalized[idx] = xh;
        y[idx] = gamma[c] * xh + beta[c];
      }
  }
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plain kernels

Tensor conv1d_forward(const Tensor& x, const Conv1dSpec& spec, const Tensor& weight, const Tensor& bias) {
  const bool batched = x.order() == 3;
  Tensor y = conv_forward_impl(as_batch(x, 2), spec, weight, bias, nullptr);
  return batched ? y : drop_batch(y);
}

Tensor batchnorm_forward(const Tensor& x, BatchNormState& state, const Tensor& gamma, const Tensor& beta, Mode mode) {
  BnSaved saved;
  return bn_forward_impl(x, gamma, beta, state, mode, saved);
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tape tape;
  const bool batched = x.order() == 2;
  Var out = linear(tape.constant(as_batch(x, 1)), tape.constant(weight), tape.constant(bias));
  return batched ? out.value() : drop_batch(out.value());
}

Tensor global_avgpool(const Tensor& x) {
  const bool batched = x.order() == 3;
  Tape tape;
  Var out = global_avgpool(tape.constant(as_batch(x, 2)));
  return batched ? out.value() : drop_batch(out.value());
}

Tensor softmax(const Tensor& logits) {
  const Tensor z = as_batch(logits, 1);
  if (z.order() != 2) throw ShapeError("softmax: expected [N, K] logits, got " + shape_string(logits.shape()));
  const std::size_t N = z.dim(0), K = z.dim(1);
  Tensor p(z.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = z.raw() + n * K;
    const double mx = *std::max_element(row, row + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < K; ++k) p[n * K + k] = std::exp(row[k] - mx) / denom;
  }
  return logits.order() == 1 ? drop_batch(p) : p;
}

double softmax_crossentropy(const Tensor& logits, std::span<const int> labels) {
  Tape tape;
  return softmax_cross_entropy(tape.constant(as_batch(logits, 1)), labels).value().item();
}

Tensor l2_normalize(const Tensor& y, double eps) {
  Tape tape;
  return l2_normalize(tape.constant(y), eps).value();
}

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Tape ops

Var conv1d(const Var& x, const Var& weight, const Var& bias, const Conv1dSpec& spec) {
  auto cols = std::make_shared<std::vector<double>>();
  Tensor y = conv_forward_impl(x.value(), spec, weight.value(), bias.value(), cols.get());
  const ConvGeometry g{x.shape()[0], x.shape()[1], x.shape()[2], y.dim(2)};
  return x.tape()->record(std::move(y), {x, weight, bias}, [x, weight, bias, spec, cols, g](Tape& t, const Tensor& gy) {
    const std::size_t ck = g.channels * spec.filter;
    const std::size_t col_size = ck * g.out_len;
    const std::size_t O = spec.out_channels;
    Tensor* gw = t.grad_target(weight);
    Tensor* gb = t.grad_target(bias);
    Tensor* gx = t.grad_target(x);
    std::vector<double> dcol(gx ? col_size : 0);
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* go = gy.raw() + n * O * g.out_len;
      const double* col = cols->data() + n * col_size;
      if (gw) gemm(go, col, gw->raw(), O, g.out_len, ck, false, true, true);
      if (gb) {
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t i = 0; i < g.out_len; ++i) (*gb)[o] += go[o * g.out_len + i];
      }
      if (gx) {
        gemm(weight.value().raw(), go, dcol.data(), ck, O, g.out_len, true, false, false);
        col2im_add(dcol.data(), g.channels, g.length, spec, g.out_len, gx->raw() + n * g.channels * g.length);
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
  auto saved = std::make_shared<BnSaved>();
  Tensor y = bn_forward_impl(x.value(), gamma.value(), beta.value(), state, mode, *saved);
  return x.tape()->record(std::move(y), {x, gamma, beta}, [x, gamma, beta, saved, mode](Tape& t, const Tensor& gy) {
    std::size_t N, C, T;
    bn_dims(gy, N, C, T);
    const Tensor& xh = saved->normalized;
    Tensor* gg = t.grad_target(gamma);
    Tensor* gb = t.grad_target(beta);
    Tensor* gx = t.grad_target(x);
    const double count = static_cast<double>(N * T);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < T; ++i) {
          const std::size_t idx = (n * C + c) * T + i;
          sum_g += gy[idx];
          sum_gx += gy[idx] * xh[idx];
        }
      if (gg) (*gg)[c] += sum_gx;
      if (gb) (*gb)[c] += sum_g;
      if (!gx) continue;
      const double gam = gamma.value()[c];
      const double inv = saved->inv_std[c];
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < T; ++i) {
          const std::size_t idx = (n * C + c) * T + i;
          if (mode == Mode::Train) {
            (*gx)[idx] += gam * inv * (gy[idx] - sum_g / count - xh[idx] * sum_gx / count);
          } else {
            (*gx)[idx] += gam * inv * gy[idx];
          }
        }
    }
  });
}

Var relu(const Var& x) {
  return x.tape()->record(relu_forward(x.value()), {x}, [x](Tape& t, const Tensor& gy) {
    if (Tensor* gx = t.grad_target(x)) {
      const Tensor& xv = x.value();
      for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += xv[i] > 0.0 ? gy[i] : 0.0;
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  if (xv.order() != 2 || w.order() != 2 || xv.dim(1) != w.dim(0) || b.shape() != Shape{w.dim(1)}) {
    throw ShapeError("linear: input " + shape_string(xv.shape()) + ", weight " + shape_string(w.shape()) +
                     ", bias " + shape_string(b.shape()) + " are incompatible");
  }
  const std::size_t N = xv.dim(0), I = w.dim(0), O = w.dim(1);
  Tensor y(Shape{N, O});
  gemm(xv.raw(), w.raw(), y.raw(), N, I, O);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) y[n * O + o] += b[o];
  return x.tape()->record(std::move(y), {x, weight, bias}, [x, weight, bias, N, I, O](Tape& t, const Tensor& gy) {
    if (Tensor* gx = t.grad_target(x)) gemm(gy.raw(), weight.value().raw(), gx->raw(), N, O, I, false, true, true);
    if (Tensor* gw = t.grad_target(weight)) gemm(x.value().raw(), gy.raw(), gw->raw(), I, N, O, true, false, true);
    if (Tensor* gb = t.grad_target(bias)) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) (*gb)[o] += gy[n * O + o];
    }
  });
}

Var global_avgpool(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.order() != 3) throw ShapeError("global_avgpool: expected [N, C, T], got " + shape_string(xv.shape()));
  const std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
  Tensor y(Shape{N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < T; ++i) s += xv[nc * T + i];
    y[nc] = s / static_cast<double>(T);
  }
  return x.tape()->record(std::move(y), {x}, [x, N, C, T](Tape& t, const Tensor& gy) {
    if (Tensor* gx = t.grad_target(x)) {
      const double w = 1.0 / static_cast<double>(T);
      for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t i = 0; i < T; ++i) (*gx)[nc * T + i] += gy[nc] * w;
    }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.order() != 2) throw ShapeError("softmax_cross_entropy: expected [N, K] logits, got " + shape_string(z.shape()));
  const std::size_t N = z.dim(0), K = z.dim(1);
  if (K < 2) throw ShapeError("softmax_cross_entropy: need at least 2 classes");
  if (labels.size() != N) throw ShapeError("softmax_cross_entropy: label count differs from batch size");
  if (!z.all_finite()) throw std::domain_error("softmax_cross_entropy: non-finite logits");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= K) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " out of range");
    }
  }
  Tensor probs = softmax(z);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = z.raw() + n * K;
    const double mx = *std::max_element(row, row + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
    loss += mx + std::log(denom) - row[labels[n]];
  }
  loss /= static_cast<double>(N);
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape()->record(Tensor::scalar(loss), {logits},
                               [logits, probs = std::move(probs), y, N, K](Tape& t, const Tensor& gy) {
                                 if (Tensor* gz = t.grad_target(logits)) {
                                   const double g = gy.item() / static_cast<double>(N);
                                   for (std::size_t n = 0; n < N; ++n)
                                     for (std::size_t k = 0; k < K; ++k) {
                                       const double target = static_cast<int>(k) == y[n] ? 1.0 : 0.0;
                                       (*gz)[n * K + k] += g * (probs[n * K + k] - target);
                                     }
                                 }
                               });
}

Var l2_normalize(const Var& y, double eps) {
  const Tensor& yv = y.value();
  if (yv.order() != 1 && yv.order() != 2) {
    throw ShapeError("l2_normalize: expected [O] or [N, O], got " + shape_string(yv.shape()));
  }
  const std::size_t N = yv.order() == 1 ? 1 : yv.dim(0);
  const std::size_t O = yv.order() == 1 ? yv.dim(0) : yv.dim(1);
  Tensor out(yv.shape());
  std::vector<double> denom(N);
  std::vector<bool> clipped(N);
  for (std::size_t n = 0; n < N; ++n) {
    double ss = 0.0;
    for (std::size_t o = 0; o < O; ++o) ss += yv[n * O + o] * yv[n * O + o];
    const double norm = std::sqrt(ss);
    clipped[n] = norm < eps;
    denom[n] = clipped[n] ? eps : norm;
    for (std::size_t o = 0; o < O; ++o) out[n * O + o] = yv[n * O + o] / denom[n];
  }
  Tensor normalized = out;
  return y.tape()->record(std::move(out), {y}, [y, normalized = std::move(normalized), denom, clipped, N, O](
                                                   Tape& t, const Tensor& gy) {
    Tensor* gx = t.grad_target(y);
    if (!gx) return;
    for (std::size_t n = 0; n < N; ++n) {
      if (clipped[n]) {
        for (std::size_t o = 0; o < O; ++o) (*gx)[n * O + o] += gy[n * O + o] / denom[n];
        continue;
      }
      double dot = 0.0;
      for (std::size_t o = 0; o < O; ++o) dot += normalized[n * O + o] * gy[n * O + o];
      for (std::size_t o = 0; o < O; ++o) {
        (*gx)[n * O + o] += (gy[n * O + o] - normalized[n * O + o] * dot) / denom[n];
      }
    }
  });
}

}  // namespace polyfuse::nn
