#include "polyfuse/fusion.hpp"

#include <cmath>
#include <limits>

#include "polyfuse/nn.hpp"

namespace polyfuse::fusion {

namespace {

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return std::numeric_limits<std::uint64_t>::max();
  return a * b;
}

std::uint64_t sat_pow(std::uint64_t base, std::size_t exp) {
  std::uint64_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r = sat_mul(r, base);
  return r;
}

Tensor as_row(const Tensor& z, const char* what) {
  if (z.order() != 1) throw ShapeError(std::string(what) + ": feature vectors must be order-1, got " + shape_string(z.shape()));
  return z.reshaped(Shape{1, z.size()});
}

Tensor drop_row(const Tensor& y) { return y.reshaped(Shape{y.dim(1)}); }

void check_guard(std::uint64_t entries, const char* what) {
  if (entries > kMaxMaterializedEntries) {
    throw GuardError(std::string(what) + ": dense weight tensor would have " + std::to_string(entries) +
                     " entries, above the limit of " + std::to_string(kMaxMaterializedEntries));
  }
}

// Factors [D_k, R, O] must agree on R and O; returns {R, O}.
std::pair<std::size_t, std::size_t> check_factors(std::span<const Tensor> factors, const Tensor& rank_weights,
                                                  const char* what) {
  if (factors.empty()) throw ShapeError(std::string(what) + ": no factors");
  const std::size_t R = factors[0].order() == 3 ? factors[0].dim(1) : 0;
  const std::size_t O = factors[0].order() == 3 ? factors[0].dim(2) : 0;
  for (const Tensor& f : factors) {
    if (f.order() != 3 || f.dim(1) != R || f.dim(2) != O) {
      throw ShapeError(std::string(what) + ": factor shape " + shape_string(f.shape()) + " is not [D, " +
                       std::to_string(R) + ", " + std::to_string(O) + "]");
    }
  }
  if (rank_weights.shape() != Shape{R}) {
    throw ShapeError(std::string(what) + ": rank weights " + shape_string(rank_weights.shape()) +
                     " do not match rank " + std::to_string(R));
  }
  return {R, O};
}

// [N, D] x F[D, R, O] -> [N, R, O]
Var project(const Var& z, const Var& factor) {
  const Shape& fs = factor.shape();
  const std::size_t N = z.shape()[0];
  Var flat = reshape(factor, Shape{fs[0], fs[1] * fs[2]});
  return reshape(matmul(z, flat), Shape{N, fs[1], fs[2]});
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::Linear: return "lf";
    case Kind::Tensor: return "tf";
    case Kind::Polynomial: return "pf";
  }
  return "?";
}

std::string to_string(Path path) { return path == Path::Full ? "full" : "factorized"; }

Kind parse_kind(const std::string& s) {
  if (s == "lf" || s == "linear") return Kind::Linear;
  if (s == "tf" || s == "tensor") return Kind::Tensor;
  if (s == "pf" || s == "polynomial") return Kind::Polynomial;
  throw std::invalid_argument("unknown fusion kind: " + s);
}

Path parse_path(const std::string& s) {
  if (s == "full") return Path::Full;
  if (s == "factorized") return Path::Factorized;
  throw std::invalid_argument("unknown fusion path: " + s);
}

std::size_t FusionSpec::concat_dim() const { return dim_a + dim_b + dim_c + (augment_one ? 1 : 0); }

std::uint64_t FusionSpec::dense_entries() const {
  switch (kind) {
    case Kind::Linear: return sat_mul(concat_dim(), output_dim);
    case Kind::Tensor: return sat_mul(sat_mul(sat_mul(dim_a, dim_b), dim_c), output_dim);
    case Kind::Polynomial: return sat_mul(sat_pow(concat_dim(), order), output_dim);
  }
  return 0;
}

void FusionSpec::validate() const {
  if (dim_a == 0 || dim_b == 0 || dim_c == 0 || output_dim == 0) {
    throw std::invalid_argument("fusion: feature and output dimensions must be positive");
  }
  if (kind != Kind::Linear && path == Path::Factorized && rank == 0) {
    throw std::invalid_argument("fusion: rank must be positive");
  }
  if (kind == Kind::Polynomial && order == 0) throw std::invalid_argument("fusion: polynomial order must be >= 1");
  if (augment_one && kind != Kind::Polynomial) {
    throw std::invalid_argument("fusion: augment_one applies to polynomial fusion only");
  }
  if (kind != Kind::Linear && path == Path::Full) check_guard(dense_entries(), "fusion full path");
}

std::uint64_t param_count(const FusionSpec& s) {
  const std::uint64_t D = s.concat_dim();
  const std::uint64_t O = s.output_dim;
  const std::uint64_t R = s.rank;
  switch (s.kind) {
    case Kind::Linear: return D * O;
    case Kind::Tensor:
      if (s.path == Path::Full) return s.dense_entries();
      return (static_cast<std::uint64_t>(s.dim_a) + s.dim_b + s.dim_c) * R * O + R;
    case Kind::Polynomial:
      if (s.path == Path::Full) return s.dense_entries();
      if (s.symmetric) return D * R * O + R;
      return s.order * D * R * O + R;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Reference computations

Tensor fuse_linear(const Tensor& z1, const Tensor& z2, const Tensor& z3, const Tensor& weight) {
  const std::size_t D = z1.size() + z2.size() + z3.size();
  if (weight.order() != 2 || weight.dim(0) != D) {
    throw ShapeError("fuse_linear: weight " + shape_string(weight.shape()) + " does not match concatenated length " +
                     std::to_string(D));
  }
  Tape t;
  const Var parts[] = {t.constant(as_row(z1, "fuse_linear")), t.constant(as_row(z2, "fuse_linear")),
                       t.constant(as_row(z3, "fuse_linear"))};
  return drop_row(matmul(concat_columns(parts), t.constant(weight)).value());
}

Tensor fuse_tensor_full(const Tensor& z1, const Tensor& z2, const Tensor& z3, const Tensor& weight) {
  if (weight.order() != 4 || weight.dim(0) != z1.size() || weight.dim(1) != z2.size() || weight.dim(2) != z3.size()) {
    throw ShapeError("fuse_tensor: weight " + shape_string(weight.shape()) + " does not match feature lengths");
  }
  Tape t;
  const Var parts[] = {t.constant(as_row(z1, "fuse_tensor")), t.constant(as_row(z2, "fuse_tensor")),
                       t.constant(as_row(z3, "fuse_tensor"))};
  const std::size_t inner = z1.size() * z2.size() * z3.size();
  return drop_row(matmul(row_outer(parts), t.constant(weight.reshaped(Shape{inner, weight.dim(3)}))).value());
}

Tensor fuse_tensor_factorized(const Tensor& z1, const Tensor& z2, const Tensor& z3, std::span<const Tensor> factors,
                              const Tensor& rank_weights) {
  if (factors.size() != 3) throw ShapeError("fuse_tensor: factorized path needs exactly 3 factors");
  check_factors(factors, rank_weights, "fuse_tensor");
  const Tensor* zs[] = {&z1, &z2, &z3};
  Tape t;
  Var prod;
  for (std::size_t k = 0; k < 3; ++k) {
    if (factors[k].dim(0) != zs[k]->size()) {
      throw ShapeError("fuse_tensor: factor " + std::to_string(k) + " " + shape_string(factors[k].shape()) +
                       " does not match feature length " + std::to_string(zs[k]->size()));
    }
    Var p = project(t.constant(as_row(*zs[k], "fuse_tensor")), t.constant(factors[k]));
    prod = k == 0 ? p : mul(prod, p);
  }
  return drop_row(rank_mix(prod, t.constant(rank_weights)).value());
}

Tensor fuse_polynomial_full(const Tensor& z, const Tensor& weight) {
  if (weight.order() < 2) throw ShapeError("fuse_polynomial: weight must have order >= 2");
  const std::size_t p = weight.order() - 1;
  for (std::size_t k = 0; k < p; ++k) {
    if (weight.dim(k) != z.size()) {
      throw ShapeError("fuse_polynomial: weight " + shape_string(weight.shape()) + " does not match feature length " +
                       std::to_string(z.size()));
    }
  }
  Tape t;
  Var zr = t.constant(as_row(z, "fuse_polynomial"));
  std::vector<Var> copies(p, zr);
  const std::size_t inner = weight.size() / weight.dim(p);
  return drop_row(matmul(row_outer(copies), t.constant(weight.reshaped(Shape{inner, weight.dim(p)}))).value());
}

Tensor fuse_polynomial_factorized(const Tensor& z, std::span<const Tensor> factors, const Tensor& rank_weights,
                                  std::size_t order) {
  if (order == 0) throw std::invalid_argument("fuse_polynomial: order must be >= 1");
  if (factors.size() != 1 && factors.size() != order) {
    throw ShapeError("fuse_polynomial: expected 1 shared or " + std::to_string(order) + " factors, got " +
                     std::to_string(factors.size()));
  }
  check_factors(factors, rank_weights, "fuse_polynomial");
  for (const Tensor& f : factors) {
    if (f.dim(0) != z.size()) throw ShapeError("fuse_polynomial: factor does not match feature length");
  }
  Tape t;
  Var zr = t.constant(as_row(z, "fuse_polynomial"));
  Var prod;
  if (factors.size() == 1) {
    prod = power(project(zr, t.constant(factors[0])), static_cast<int>(order));
  } else {
    for (std::size_t k = 0; k < order; ++k) {
      Var p = project(zr, t.constant(factors[k]));
      prod = k == 0 ? p : mul(prod, p);
    }
  }
  return drop_row(rank_mix(prod, t.constant(rank_weights)).value());
}

Tensor reconstruct_full(std::span<const Tensor> factors, const Tensor& rank_weights) {
  const auto [R, O] = check_factors(factors, rank_weights, "reconstruct_full");
  Shape shape;
  std::uint64_t entries = O;
  for (const Tensor& f : factors) {
    shape.push_back(f.dim(0));
    entries = sat_mul(entries, f.dim(0));
  }
  check_guard(entries, "reconstruct_full");
  shape.push_back(O);

  // acc[flat, r, o] = prod over the first k factors, w_r folded into the first
  std::vector<double> acc(factors[0].size());
  const std::size_t D0 = factors[0].dim(0);
  for (std::size_t i = 0; i < D0; ++i)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t o = 0; o < O; ++o) {
        acc[(i * R + r) * O + o] = rank_weights[r] * factors[0][(i * R + r) * O + o];
      }
  std::size_t rows = D0;
  for (std::size_t k = 1; k < factors.size(); ++k) {
    const Tensor& f = factors[k];
    const std::size_t Dk = f.dim(0);
    std::vector<double> next(rows * Dk * R * O);
    for (std::size_t pf = 0; pf < rows; ++pf)
      for (std::size_t i = 0; i < Dk; ++i)
        for (std::size_t ro = 0; ro < R * O; ++ro) {
          next[((pf * Dk + i) * R * O) + ro] = acc[pf * R * O + ro] * f[i * R * O + ro];
        }
    acc = std::move(next);
    rows *= Dk;
  }
  Tensor out(shape);
  for (std::size_t pf = 0; pf < rows; ++pf)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t o = 0; o < O; ++o) out[pf * O + o] += acc[(pf * R + r) * O + o];
  return out;
}

double reconstruct_entry(std::span<const Tensor> factors, const Tensor& rank_weights,
                         std::span<const std::size_t> index, std::size_t out) {
  const auto [R, O] = check_factors(factors, rank_weights, "reconstruct_entry");
  if (index.size() != factors.size() || out >= O) throw ShapeError("reconstruct_entry: index out of range");
  double total = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    double prod = rank_weights[r];
    for (std::size_t k = 0; k < factors.size(); ++k) {
      if (index[k] >= factors[k].dim(0)) throw ShapeError("reconstruct_entry: index out of range");
      prod *= factors[k][(index[k] * R + r) * O + out];
    }
    total += prod;
  }
  return total;
}

// ---------------------------------------------------------------------------
// FusionLayer

FusionLayer::FusionLayer(FusionSpec spec, ParameterStore& store, std::string prefix, std::mt19937_64& rng)
    : spec_(spec), store_(&store), prefix_(std::move(prefix)) {
  spec_.validate();
  const std::size_t D = spec_.concat_dim();
  const std::size_t O = spec_.output_dim;
  const std::size_t R = spec_.rank;
  auto add = [&](const std::string& name, Tensor value) {
    store_->add(prefix_ + name, std::move(value));
    names_.push_back(prefix_ + name);
  };
  auto add_rank_weights = [&] { add("rank_weights", Tensor(Shape{R}, 1.0 / static_cast<double>(R))); };

  switch (spec_.kind) {
    case Kind::Linear:
      add("weight", nn::uniform_tensor(Shape{D, O}, std::sqrt(1.0 / static_cast<double>(D)), rng));
      break;
    case Kind::Tensor:
      if (spec_.path == Path::Full) {
        const double fan = static_cast<double>(spec_.dim_a * spec_.dim_b * spec_.dim_c);
        add("weight", nn::uniform_tensor(Shape{spec_.dim_a, spec_.dim_b, spec_.dim_c, O}, std::sqrt(1.0 / fan), rng));
      } else {
        const std::size_t dims[] = {spec_.dim_a, spec_.dim_b, spec_.dim_c};
        for (std::size_t k = 0; k < 3; ++k) {
          const double bound = std::pow(1.0 / static_cast<double>(dims[k]), 1.0 / 3.0);
          add("factor" + std::to_string(k), nn::uniform_tensor(Shape{dims[k], R, O}, bound, rng));
        }
        add_rank_weights();
      }
      break;
    case Kind::Polynomial:
      if (spec_.path == Path::Full) {
        Shape shape(spec_.order, D);
        shape.push_back(O);
        const double fan = std::pow(static_cast<double>(D), static_cast<double>(spec_.order));
        add("weight", nn::uniform_tensor(shape, std::sqrt(1.0 / fan), rng));
      } else {
        const double bound = std::pow(1.0 / static_cast<double>(D), 1.0 / static_cast<double>(spec_.order));
        if (spec_.symmetric) {
          add("factor", nn::uniform_tensor(Shape{D, R, O}, bound, rng));
        } else {
          for (std::size_t k = 0; k < spec_.order; ++k) {
            add("factor" + std::to_string(k), nn::uniform_tensor(Shape{D, R, O}, bound, rng));
          }
        }
        add_rank_weights();
      }
      break;
  }
}

Parameter& FusionLayer::param(const std::string& name) const { return store_->at(prefix_ + name); }

Var FusionLayer::projection(Tape& tape, const Var& z, const std::string& factor) const {
  return project(z, tape.parameter(param(factor)));
}

Var FusionLayer::forward(Tape& tape, const Var& z1, const Var& z2, const Var& z3) const {
  const std::size_t dims[] = {spec_.dim_a, spec_.dim_b, spec_.dim_c};
  const Var zs[] = {z1, z2, z3};
  const std::size_t N = z1.shape().at(0);
  for (std::size_t k = 0; k < 3; ++k) {
    if (zs[k].shape() != Shape{N, dims[k]}) {
      throw ShapeError("fusion: modality " + std::to_string(k + 1) + " features " + shape_string(zs[k].shape()) +
                       " do not match [" + std::to_string(N) + ", " + std::to_string(dims[k]) + "]");
    }
  }

  auto concatenated = [&] {
    std::vector<Var> parts(zs, zs + 3);
    if (spec_.augment_one) parts.push_back(tape.constant(Tensor(Shape{N, 1}, 1.0)));
    return concat_columns(parts);
  };

  switch (spec_.kind) {
    case Kind::Linear:
      return matmul(concatenated(), tape.parameter(param("weight")));
    case Kind::Tensor: {
      if (spec_.path == Path::Full) {
        Var w = reshape(tape.parameter(param("weight")), Shape{dims[0] * dims[1] * dims[2], spec_.output_dim});
        return matmul(row_outer(zs), w);
      }
      Var prod = projection(tape, z1, "factor0");
      prod = mul(prod, projection(tape, z2, "factor1"));
      prod = mul(prod, projection(tape, z3, "factor2"));
      return rank_mix(prod, tape.parameter(param("rank_weights")));
    }
    case Kind::Polynomial: {
      Var z = concatenated();
      if (spec_.path == Path::Full) {
        std::vector<Var> copies(spec_.order, z);
        const Tensor& w = param("weight").value;
        Var wv = reshape(tape.parameter(param("weight")), Shape{w.size() / spec_.output_dim, spec_.output_dim});
        return matmul(row_outer(copies), wv);
      }
      Var prod;
      if (spec_.symmetric) {
        prod = power(projection(tape, z, "factor"), static_cast<int>(spec_.order));
      } else {
        for (std::size_t k = 0; k < spec_.order; ++k) {
          Var p = projection(tape, z, "factor" + std::to_string(k));
          prod = k == 0 ? p : mul(prod, p);
        }
      }
      return rank_mix(prod, tape.parameter(param("rank_weights")));
    }
  }
  throw std::logic_error("fusion: unknown kind");
}

Tensor FusionLayer::apply(const Tensor& z1, const Tensor& z2, const Tensor& z3) const {
  Tape tape;
  Var y = forward(tape, tape.constant(as_row(z1, "fusion")), tape.constant(as_row(z2, "fusion")),
                  tape.constant(as_row(z3, "fusion")));
  return drop_row(y.value());
}

std::vector<Tensor> FusionLayer::position_factors() const {
  std::vector<Tensor> out;
  if (spec_.path == Path::Full || spec_.kind == Kind::Linear) return out;
  if (spec_.kind == Kind::Tensor) {
    for (int k = 0; k < 3; ++k) out.push_back(param("factor" + std::to_string(k)).value);
  } else if (spec_.symmetric) {
    out.assign(spec_.order, param("factor").value);
  } else {
    for (std::size_t k = 0; k < spec_.order; ++k) out.push_back(param("factor" + std::to_string(k)).value);
  }
  return out;
}

const Tensor& FusionLayer::rank_weights() const { return param("rank_weights").value; }

Tensor FusionLayer::materialize() const {
  if (spec_.kind == Kind::Linear || spec_.path == Path::Full) return param("weight").value;
  check_guard(spec_.dense_entries(), "materialize");
  return reconstruct_full(position_factors(), rank_weights());
}

}  // namespace polyfuse::fusion
