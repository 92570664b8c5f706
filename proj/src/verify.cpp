#include "polyfuse/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "json.hpp"
#include "polyfuse/fusion.hpp"
#include "polyfuse/models.hpp"
#include "polyfuse/nn.hpp"
#include "polyfuse/tensor_io.hpp"

namespace polyfuse {

namespace {

using fusion::FusionLayer;
using fusion::FusionSpec;
using fusion::Kind;

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Multiples of 1/16 keep every product and partial sum exact.
Tensor dyadic(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_int_distribution<int> d(-32, 32);
  for (double& v : t.data()) v = d(rng) / 16.0;
  return t;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double relative(const Tensor& got, const Tensor& want) {
  double d = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) d = std::max(d, std::abs(got[i] - want[i]));
  return d / std::max(max_abs(want), 1e-300);
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

// y_o = sum over index tuples of prod_k z_k[i_k] * W[i_1..i_p, o], by enumeration.
Tensor enumerate(const std::vector<const Tensor*>& zs, const Tensor& w) {
  const std::size_t p = zs.size(), O = w.dim(p);
  Tensor y(Shape{O}, 0.0);
  std::vector<std::size_t> idx(p, 0);
  for (std::size_t flat = 0; flat < w.size() / O; ++flat) {
    double prod = 1.0;
    for (std::size_t k = 0; k < p; ++k) prod *= (*zs[k])[idx[k]];
    for (std::size_t o = 0; o < O; ++o) y[o] += prod * w[flat * O + o];
    for (std::size_t k = p; k-- > 0;) {
      if (++idx[k] < zs[k]->size()) break;
      idx[k] = 0;
    }
  }
  return y;
}

void randomize(ParameterStore& store, std::mt19937_64& rng) {
  for (const auto& name : store.names()) store.at(name).value = uniform(store.at(name).value.shape(), rng);
}

CheckResult linear_blocks(std::mt19937_64& rng) {
  std::size_t failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t A = 1 + trial % 7, B = 1 + trial % 5, C = 1 + trial % 3, O = 1 + trial % 4;
    const Tensor z1 = dyadic({A}, rng), z2 = dyadic({B}, rng), z3 = dyadic({C}, rng);
    const Tensor w = dyadic({A + B + C, O}, rng);
    Tensor blocks(Shape{O}, 0.0);
    std::size_t row = 0;
    for (const Tensor* z : {&z1, &z2, &z3})
      for (std::size_t i = 0; i < z->size(); ++i, ++row)
        for (std::size_t o = 0; o < O; ++o) blocks[o] += (*z)[i] * w.at({row, o});
    failures += !(fusion::fuse_linear(z1, z2, z3, w) == blocks);
  }
  return {"linear-blocks", failures == 0, std::to_string(100 - failures) + "/100 exact", 0};
}

CheckResult second_order_blocks(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dims[] = {1 + static_cast<std::size_t>(trial) % 4, 1 + static_cast<std::size_t>(trial / 4) % 3,
                                1 + static_cast<std::size_t>(trial / 12) % 4};
    const std::size_t D = dims[0] + dims[1] + dims[2], O = 1 + trial % 3;
    const Tensor zs[] = {uniform({dims[0]}, rng), uniform({dims[1]}, rng), uniform({dims[2]}, rng)};
    const Tensor w = uniform({D, D, O}, rng);
    const std::size_t start[] = {0, dims[0], dims[0] + dims[1]};
    Tensor expansion(Shape{O}, 0.0);
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t n = 0; n < 3; ++n) {
        Tensor block(Shape{dims[m], dims[n], O});
        for (std::size_t i = 0; i < dims[m]; ++i)
          for (std::size_t j = 0; j < dims[n]; ++j)
            for (std::size_t o = 0; o < O; ++o) block.at({i, j, o}) = w.at({start[m] + i, start[n] + j, o});
        const Tensor term = contract(outer({zs[m], zs[n]}), block, {0, 1}, {0, 1});
        for (std::size_t o = 0; o < O; ++o) expansion[o] += term[o];
      }
    worst = std::max(worst, relative(fusion::fuse_polynomial_full(concat({zs[0], zs[1], zs[2]}), w), expansion));
  }
  return {"second-order-blocks", worst <= 1e-10, "max relative error " + sci(worst) + " (tolerance 1e-10)", 0};
}

CheckResult cp_equivalence(std::mt19937_64& rng) {
  double worst = 0.0;
  std::size_t cases = 0;
  const std::size_t O = 2;
  // polynomial: order 1..3, concatenated length 3..6, every rank up to a full-rank bound
  for (std::size_t p = 1; p <= 3; ++p)
    for (std::size_t D = 3; D <= 6; ++D) {
      std::size_t full = 1;
      for (std::size_t k = 0; k < p; ++k) full *= D;
      for (std::size_t R = 1; R <= full; ++R) {
        FusionSpec s;
        s.kind = Kind::Polynomial;
        s.dim_a = 1;
        s.dim_b = (D - 1) / 2;
        s.dim_c = D - 1 - s.dim_b;
        s.output_dim = O;
        s.rank = R;
        s.order = p;
        s.symmetric = R % 2 == 0;
        ParameterStore store;
        FusionLayer layer(s, store, "f.", rng);
        randomize(store, rng);
        const Tensor z1 = uniform({s.dim_a}, rng), z2 = uniform({s.dim_b}, rng), z3 = uniform({s.dim_c}, rng);
        const Tensor z = concat({z1, z2, z3});
        const std::vector<const Tensor*> copies(p, &z);
        worst = std::max(worst, relative(layer.apply(z1, z2, z3), enumerate(copies, layer.materialize())));
        ++cases;
      }
    }
  // tensor fusion: modality lengths up to 6
  for (std::size_t A = 1; A <= 6; ++A)
    for (std::size_t B = A; B <= 6; ++B)
      for (std::size_t C = 1; C <= 6; ++C) {
        std::size_t dims[] = {A, B, C, O};
        std::sort(dims, dims + 4);
        const std::size_t full = dims[0] * dims[1] * dims[2];
        for (std::size_t R = 1; R <= full; ++R) {
          FusionSpec s;
          s.kind = Kind::Tensor;
          s.dim_a = A;
          s.dim_b = B;
          s.dim_c = C;
          s.output_dim = O;
          s.rank = R;
          ParameterStore store;
          FusionLayer layer(s, store, "f.", rng);
          randomize(store, rng);
          const Tensor z1 = uniform({A}, rng), z2 = uniform({B}, rng), z3 = uniform({C}, rng);
          worst = std::max(worst, relative(layer.apply(z1, z2, z3), enumerate({&z1, &z2, &z3}, layer.materialize())));
          ++cases;
        }
      }
  return {"cp-equivalence", worst <= 1e-8,
          std::to_string(cases) + " cases, max relative error " + sci(worst) + " (tolerance 1e-8)", 0};
}

ModelSpec tiny(std::optional<Modality> modality, Kind kind) {
  ModelSpec s;
  s.modality = modality;
  s.eeg_channels = 5;
  s.eeg_length = 128;
  s.nirs_channels = 6;
  s.nirs_length = 30;
  s.width_divisor = 6;
  s.fusion.kind = kind;
  s.fusion.output_dim = 4;
  s.fusion.rank = 3;
  s.fusion.order = kind == Kind::Polynomial ? 3 : 1;
  s.fusion.symmetric = true;
  return s;
}

CheckResult gradients(std::mt19937_64& rng) {
  std::ostringstream detail;
  double worst = 0.0;

  // primitives in one composite loss
  Parameter a{uniform({3, 4}, rng), {}}, b{uniform({4, 2}, rng), {}}, c{uniform({3, 2}, rng), {}};
  Parameter mix{uniform({2, 3, 4}, rng, 0.3, 1.2), {}}, weights{uniform({3}, rng), {}};
  const Tensor probe = uniform({3, 2}, rng), probe_outer = uniform({3, 32}, rng), probe_mix = uniform({2, 4}, rng);
  Parameter* prims[] = {&a, &b, &c, &mix, &weights};
  auto primitive_loss = [&](Tape& t) {
    Var av = t.parameter(a), bv = t.parameter(b), cv = t.parameter(c);
    Var m = add(matmul(av, bv), cv);
    Var l1 = sum(mul(power(m, 3), t.constant(probe)));
    Var l2 = sum(mul(row_outer(std::vector<Var>{av, cv, av}), t.constant(probe_outer)));
    Var l3 = sum(mul(rank_mix(t.parameter(mix), t.parameter(weights)), t.constant(probe_mix)));
    Var l4 = scale(sum(reshape(concat_columns(std::vector<Var>{m, av}), Shape{18})), 0.25);
    return add(add(l1, l2), add(l3, l4));
  };
  const double prim = grad_check(primitive_loss, prims).max_error;
  worst = std::max(worst, prim);
  detail << "primitives " << sci(prim);

  const std::pair<const char*, ModelSpec> models[] = {{"eeg", tiny(Modality::Eeg, Kind::Linear)},
                                                      {"lf", tiny(std::nullopt, Kind::Linear)},
                                                      {"tf", tiny(std::nullopt, Kind::Tensor)},
                                                      {"pf", tiny(std::nullopt, Kind::Polynomial)}};
  for (const auto& [name, spec] : models) {
    Model model(spec, rng());
    Batch batch{uniform({3, spec.eeg_channels, spec.eeg_length}, rng),
                uniform({3, spec.nirs_channels, spec.nirs_length}, rng),
                uniform({3, spec.nirs_channels, spec.nirs_length}, rng),
                {0, 1, 1}};
    std::vector<Parameter*> ps;
    for (const auto& n : model.parameters().names()) ps.push_back(&model.parameters().at(n));
    auto loss = [&](Tape& t) { return nn::softmax_cross_entropy(model.forward(t, batch), batch.labels); };
    const double err = grad_check(loss, ps, 1e-6).max_error;
    worst = std::max(worst, err);
    detail << ", " << name << " " << sci(err);
  }
  return {"gradients", worst < 1e-4, detail.str() + " (tolerance 1e-4)", 0};
}

CheckResult param_counts(std::mt19937_64& rng) {
  std::size_t mismatches = 0;
  std::uniform_int_distribution<int> dim(1, 7), kind(0, 2), order(1, 4), rank(1, 6), coin(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    FusionSpec s;
    s.kind = static_cast<Kind>(kind(rng));
    s.dim_a = dim(rng);
    s.dim_b = dim(rng);
    s.dim_c = dim(rng);
    s.output_dim = dim(rng);
    s.rank = rank(rng);
    s.order = order(rng);
    s.symmetric = coin(rng);
    s.path = coin(rng) ? fusion::Path::Full : fusion::Path::Factorized;
    s.augment_one = s.kind == Kind::Polynomial && coin(rng);
    ParameterStore store;
    FusionLayer layer(s, store, "f.", rng);
    mismatches += fusion::param_count(s) != store.total_entries();
  }
  FusionSpec full_size;
  full_size.dim_a = 120;
  full_size.dim_b = full_size.dim_c = 144;
  full_size.output_dim = 128;
  full_size.rank = 16;
  FusionSpec lf = full_size, tf_full = full_size, pf_sym = full_size;
  lf.kind = Kind::Linear;
  tf_full.kind = Kind::Tensor;
  tf_full.path = fusion::Path::Full;
  pf_sym.kind = Kind::Polynomial;
  pf_sym.order = 5;
  pf_sym.symmetric = true;
  const bool derived = fusion::param_count(lf) == 52'224 && fusion::param_count(tf_full) == 318'504'960 &&
                       fusion::param_count(pf_sym) == 835'600;
  return {"param-counts", mismatches == 0 && derived,
          std::to_string(200 - mismatches) + "/200 random specs match; LF " + std::to_string(fusion::param_count(lf)) +
              ", TF full " + std::to_string(fusion::param_count(tf_full)) + ", PF symmetric R=16 " +
              std::to_string(fusion::param_count(pf_sym)),
          0};
}

CheckResult extractor_shapes() {
  const auto eeg = eeg_extractor().time_lengths(600);
  const auto nirs = nirs_extractor("oxy").time_lengths(30);
  const bool ok = eeg == std::vector<std::size_t>{148, 146, 144, 34, 32, 30} &&
                  nirs == std::vector<std::size_t>{13, 11, 9, 7, 5, 3} && eeg_extractor().feature_dim() == 120 &&
                  nirs_extractor("oxy").feature_dim() == 144;
  auto join = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s;
  };
  return {"extractor-shapes", ok, "eeg " + join(eeg) + " -> 120; nirs " + join(nirs) + " -> 144", 0};
}

CheckResult checkpoint(const std::filesystem::path& dir) {
  try {
    const Model model = load_checkpoint(dir);
    std::ifstream in(dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(in);
    const auto* layer = model.fusion_layer();
    if (!layer) {
      return {"checkpoint", true, "loaded; no fusion factors to check", 0};
    }
    const auto factors = layer->position_factors();
    double worst = 0.0;
    std::size_t n = 0;
    for (const auto& probe : manifest.at("fusion_probes")) {
      const auto index = probe.at("index").get<std::vector<std::size_t>>();
      const double want = probe.at("value").get<double>();
      const double got = fusion::reconstruct_entry(factors, layer->rank_weights(), index, probe.at("output"));
      worst = std::max(worst, std::abs(got - want) / std::max(1e-12, std::abs(want)));
      ++n;
    }
    double response = 0.0;
    if (manifest.contains("fusion_response")) {
      const auto& r = manifest.at("fusion_response");
      std::vector<Tensor> z;
      for (const auto& input : r.at("inputs")) z.push_back(Tensor::vector(input.get<std::vector<double>>()));
      const Tensor want = Tensor::vector(r.at("output").get<std::vector<double>>());
      if (z.size() != 3) throw FormatError("checkpoint: fusion_response needs three inputs");
      const Tensor got = layer->apply(z[0], z[1], z[2]);
      if (got.shape() != want.shape()) throw FormatError("checkpoint: fusion_response output has the wrong length");
      response = relative(got, want);
    }
    return {"checkpoint", worst <= 1e-12 && response <= 1e-12,
            std::to_string(n) + " reconstructed entries, max relative error " + sci(worst) +
                "; fusion response error " + sci(response),
            0};
  } catch (const std::exception& e) {
    return {"checkpoint", false, e.what(), 0};
  }
}

}  // namespace

const std::vector<std::string>& verify_check_names() {
  static const std::vector<std::string> names{"linear-blocks", "second-order-blocks", "cp-equivalence", "gradients",
                                              "param-counts",  "extractor-shapes",   "checkpoint"};
  return names;
}

std::vector<CheckResult> run_verify(const VerifyOptions& options) {
  std::vector<std::string> selected;
  if (options.filter.empty()) {
    selected = verify_check_names();
    if (options.checkpoint.empty()) selected.pop_back();
  } else {
    std::stringstream ss(options.filter);
    std::string name;
    while (std::getline(ss, name, ',')) {
      const auto& all = verify_check_names();
      if (std::find(all.begin(), all.end(), name) == all.end()) {
        throw std::invalid_argument("unknown check '" + name + "'");
      }
      if (name == "checkpoint" && options.checkpoint.empty()) {
        throw std::invalid_argument("the checkpoint check needs --checkpoint");
      }
      selected.push_back(name);
    }
  }

  std::vector<CheckResult> results;
  for (const auto& name : selected) {
    std::mt19937_64 rng(options.seed);
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    if (name == "linear-blocks") r = linear_blocks(rng);
    else if (name == "second-order-blocks") r = second_order_blocks(rng);
    else if (name == "cp-equivalence") r = cp_equivalence(rng);
    else if (name == "gradients") r = gradients(rng);
    else if (name == "param-counts") r = param_counts(rng);
    else if (name == "extractor-shapes") r = extractor_shapes();
    else r = checkpoint(options.checkpoint);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace polyfuse
