#include <cmath>
#include <numeric>

#include "doctest.h"
#include "polyfuse/trainer.hpp"
#include "test_support.hpp"

using namespace polyfuse;

namespace {

SyntheticSpec tiny_data(Generator g, std::size_t trials, double noise = 0.1) {
  SyntheticSpec s;
  s.generator = g;
  s.trials = trials;
  s.noise = noise;
  s.shape = {5, 128, 6, 30};
  return s;
}

ModelSpec tiny_model(std::optional<Modality> modality, fusion::Kind kind = fusion::Kind::Linear) {
  ModelSpec s;
  s.modality = modality;
  s.eeg_channels = 5;
  s.eeg_length = 128;
  s.nirs_channels = 6;
  s.nirs_length = 30;
  s.width_divisor = 6;
  s.fusion.kind = kind;
  s.fusion.output_dim = 8;
  s.fusion.rank = 4;
  s.fusion.order = kind == fusion::Kind::Polynomial ? 3 : 1;
  s.fusion.symmetric = true;
  return s;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  return c;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged and moments decay") {
  ParameterStore store;
  store.add("w", Tensor::vector({1.0, -2.0}));
  Adam opt(store);
  opt.step();
  CHECK(store.at("w").value == Tensor::vector({1.0, -2.0}));
  CHECK(opt.first_moment("w") == Tensor(Shape{2}, 0.0));

  store.at("w").grad = Tensor::vector({0.5, 0.5});
  opt.step();
  const Tensor m1 = opt.first_moment("w");
  const Tensor v1 = opt.second_moment("w");
  store.zero_grad();
  opt.step();
  CHECK(opt.first_moment("w")[0] == doctest::Approx(0.9 * m1[0]).epsilon(1e-15));
  CHECK(opt.second_moment("w")[0] == doctest::Approx(0.999 * v1[0]).epsilon(1e-15));
  CHECK(opt.steps() == 3);
}

TEST_CASE("adam: first step moves by lr in the gradient's sign") {
  ParameterStore store;
  store.add("w", Tensor::vector({0.0, 0.0, 0.0}));
  Adam opt(store);
  store.at("w").grad = Tensor::vector({3.0, -0.01, 250.0});
  opt.step();
  CHECK(store.at("w").value[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(store.at("w").value[1] == doctest::Approx(1e-3).epsilon(1e-5));
  CHECK(store.at("w").value[2] == doctest::Approx(-1e-3).epsilon(1e-6));
  // a constant gradient keeps the step at lr
  for (int i = 0; i < 500; ++i) {
    const double before = store.at("w").value[0];
    store.at("w").grad = Tensor::vector({3.0, -0.01, 250.0});
    opt.step();
    CHECK(before - store.at("w").value[0] == doctest::Approx(1e-3).epsilon(1e-6));
  }
}

TEST_CASE("adam: converges on a quadratic bowl") {
  std::mt19937_64 rng(1);
  const Tensor target = polyfuse::testing::random_tensor({5}, rng, -0.5, 0.5);
  ParameterStore store;
  store.add("w", Tensor(Shape{5}, 0.0));
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam opt(store, cfg);
  std::size_t steps = 0;
  double err = 1.0;
  for (; steps < 2000 && err >= 1e-3; ++steps) {
    Parameter& w = store.at("w");
    for (std::size_t i = 0; i < 5; ++i) w.grad[i] = 2.0 * (w.value[i] - target[i]);
    opt.step();
    err = 0.0;
    for (std::size_t i = 0; i < 5; ++i) err = std::max(err, std::abs(w.value[i] - target[i]));
  }
  CHECK(err < 1e-3);
  CHECK(steps <= 2000);
}

TEST_CASE("adam: zero learning rate and non-finite gradients") {
  ParameterStore store;
  store.add("a", Tensor::vector({0.3, 0.7}));
  store.add("b", Tensor::vector({1.5}));
  AdamConfig cfg;
  cfg.lr = 0.0;
  Adam opt(store, cfg);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    store.at("a").grad = polyfuse::testing::random_tensor({2}, rng);
    store.at("b").grad = polyfuse::testing::random_tensor({1}, rng);
    opt.step();
  }
  CHECK(store.at("a").value == Tensor::vector({0.3, 0.7}));
  CHECK(store.at("b").value == Tensor::vector({1.5}));

  store.at("b").grad[0] = std::nan("");
  try {
    opt.step();
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("parameter b") != std::string::npos);
  }
}

TEST_CASE("train is deterministic and reduces the loss") {
  const auto data = synth_dataset(tiny_data(Generator::Additive, 10), 3);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  Model a(tiny_model(Modality::Oxy), 4), b(tiny_model(Modality::Oxy), 4);
  const auto ra = train(a, data, all, quick(3), 5);
  const auto rb = train(b, data, all, quick(3), 5);
  CHECK(ra.loss_history == rb.loss_history);
  CHECK(ra.loss_history.back() < ra.loss_history.front());
  CHECK(a.parameters().at("head.out.weight").value == b.parameters().at("head.out.weight").value);
  CHECK(ra.steps == 3 * ((data.size() + 15) / 16));
}

TEST_CASE("train reports divergence with the epoch") {
  const auto data = synth_dataset(tiny_data(Generator::Additive, 4), 3);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  Model m(tiny_model(Modality::Eeg), 4);
  TrainConfig cfg = quick(5);
  cfg.adam.lr = 1e300;
  try {
    train(m, data, all, cfg, 1);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("parameter") != std::string::npos);
  }
}

TEST_CASE("cross-validation on separable data") {
  const auto data = synth_dataset(tiny_data(Generator::Additive, 20, 0.0), 6);
  CvOptions opt;
  opt.seed = 7;
  const CvReport r = cross_validate(tiny_model(std::nullopt, fusion::Kind::Linear), data, quick(8), opt);
  REQUIRE(r.folds.size() == 5);
  double sum = 0;
  for (const auto& f : r.folds) {
    CHECK(f.accuracy >= 0.99);
    CHECK(f.offset_accuracy.size() == 33);
    CHECK(f.test_segments + f.train_segments == data.size());
    sum += f.accuracy;
  }
  CHECK(std::abs(r.mean - sum / 5.0) <= 1e-12);
  REQUIRE(r.offset_accuracy.size() == 33);
  CHECK(r.offset_accuracy.begin()->first == -10);
  CHECK(r.offset_accuracy.rbegin()->first == 22);
  CHECK(r.subject_accuracy.size() == 1);

  const std::string csv = r.to_csv();
  CHECK(csv.rfind("fold,offset,accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5 * 33);
}

TEST_CASE("cross-validation on shuffled labels stays at chance") {
  const auto data = synth_dataset(tiny_data(Generator::Additive, 62), 8).with_shuffled_labels(9);
  CvOptions opt;
  opt.k = 2;
  opt.folds = {0};
  const CvReport r = cross_validate(tiny_model(Modality::Eeg), data, quick(4), opt);
  CHECK(r.folds[0].test_segments >= 1000);
  CHECK(std::abs(r.mean - 0.5) <= 0.05);
}

TEST_CASE("cross-validation reports are reproducible and independent of jobs") {
  const auto data = synth_dataset(tiny_data(Generator::Interaction, 10), 10);
  CvOptions opt;
  opt.seed = 11;
  opt.folds = {0, 3};
  const ModelSpec spec = tiny_model(std::nullopt, fusion::Kind::Polynomial);
  const CvReport a = cross_validate(spec, data, quick(2), opt);
  opt.jobs = 2;
  const CvReport b = cross_validate(spec, data, quick(2), opt);
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(a.to_csv() == b.to_csv());
  CHECK(a.folds[1].fold == 3);

  opt.folds = {7};
  CHECK_THROWS_AS(cross_validate(spec, data, quick(1), opt), std::invalid_argument);
}

TEST_CASE("fold seeds differ") {
  CHECK(fold_seed(1, 0) != fold_seed(1, 1));
  CHECK(fold_seed(1, 0) != fold_seed(2, 0));
  CHECK(fold_seed(5, 3) == fold_seed(5, 3));
}
