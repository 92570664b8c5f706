#include <sstream>

#include "doctest.h"
#include "polyfuse/tensor.hpp"
#include "polyfuse/tensor_io.hpp"
#include "test_support.hpp"

using namespace polyfuse;
using polyfuse::testing::random_tensor;

TEST_CASE("tensor construction invariants") {
  Tensor s;
  CHECK(s.order() == 0);
  CHECK(s.size() == 1);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.at({1, 0}) == 4.0);
  CHECK(m.at({0, 2}) == 3.0);
}

TEST_CASE("contract: identity and all-ones") {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(contract(a, eye, {0}, {0}) == Tensor::vector({1, 2, 3}));

  Tensor x = Tensor::vector({1, 2});
  Tensor w(Shape{2, 1, 1}, 1.0);
  Tensor y = contract(x, w, {0}, {0});
  CHECK(y.shape() == Shape{1, 1});
  CHECK(y.at({0, 0}) == 3.0);
}

TEST_CASE("contract: matrix product matches the triple loop") {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor c = contract(a, b, {1}, {0});
  CHECK(polyfuse::testing::rel_diff(c, polyfuse::testing::naive_matmul(a, b)) < 1e-14);

  // contracting every axis yields a scalar
  Tensor full = contract(a, a, {0, 1}, {0, 1});
  CHECK(full.order() == 0);
  double ss = 0.0;
  for (double v : a.data()) ss += v * v;
  CHECK(full.item() == doctest::Approx(ss).epsilon(1e-14));

  // non-adjacent axes pair in listed order
  Tensor t = random_tensor({2, 3, 4}, rng);
  Tensor u = random_tensor({4, 5, 2}, rng);
  Tensor r = contract(t, u, {0, 2}, {2, 0});
  CHECK(r.shape() == Shape{3, 5});
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t l = 0; l < 5; ++l) {
      double s = 0.0;
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < 4; ++k) s += t.at({i, j, k}) * u.at({k, l, i});
      CHECK(r.at({j, l}) == doctest::Approx(s).epsilon(1e-13));
    }
}

TEST_CASE("contract: errors name the shapes and axis pair") {
  Tensor a(Shape{3, 4});
  Tensor b(Shape{5, 2});
  try {
    contract(a, b, {1}, {0});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3, 4]") != std::string::npos);
    CHECK(msg.find("[5, 2]") != std::string::npos);
    CHECK(msg.find("(1, 0)") != std::string::npos);
  }
  CHECK_THROWS_AS(contract(a, a, {0, 0}, {0, 1}), ShapeError);
  CHECK_THROWS_AS(contract(a, a, {2}, {0}), ShapeError);
}

TEST_CASE("outer products") {
  Tensor o = outer({Tensor::vector({1, 2}), Tensor::vector({3, 4}), Tensor::vector({5})});
  CHECK(o.shape() == Shape{2, 2, 1});
  CHECK(o.at({0, 0, 0}) == 15.0);
  CHECK(o.at({0, 1, 0}) == 20.0);
  CHECK(o.at({1, 0, 0}) == 30.0);
  CHECK(o.at({1, 1, 0}) == 40.0);

  Tensor v = Tensor::vector({0.5, -2, 7});
  CHECK(outer({v}) == v);
  CHECK_THROWS_AS(outer(std::span<const Tensor>{}), ShapeError);
  CHECK_THROWS_AS(outer({Tensor(Shape{2, 2})}), ShapeError);

  std::mt19937_64 rng(3);
  Tensor p = random_tensor({4}, rng), q = random_tensor({4}, rng), r = random_tensor({4}, rng);
  Tensor pqr = outer({p, q, r});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(pqr.at({i, j, k}) == p[i] * q[j] * r[k]);
}

TEST_CASE("concat") {
  CHECK(concat({Tensor::vector({1}), Tensor::vector({2, 3})}) == Tensor::vector({1, 2, 3}));
  Tensor v = Tensor::vector({4, 5});
  CHECK(concat({v}) == v);
  CHECK(concat({Tensor(Shape{120}), Tensor(Shape{144}), Tensor(Shape{144})}).size() == 408);
  CHECK_THROWS_AS(concat({Tensor(Shape{2, 1})}), ShapeError);
}

TEST_CASE("property: contract is bilinear") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng), c = random_tensor({5, 4}, rng);
    const double alpha = std::uniform_real_distribution<double>(-3, 3)(rng);
    Tensor mix = a;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * a[i] + b[i];
    Tensor lhs = contract(mix, c, {1}, {0});
    Tensor ra = contract(a, c, {1}, {0}), rb = contract(b, c, {1}, {0});
    Tensor rhs = ra;
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = alpha * ra[i] + rb[i];
    CHECK(polyfuse::testing::rel_diff(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("property: outer then all-ones contraction is the product of sums") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> vs;
    double expected = 1.0;
    for (int k = 0; k < 3; ++k) {
      vs.push_back(random_tensor({2 + static_cast<std::size_t>(trial % 4) + k}, rng));
      double s = 0.0;
      for (double v : vs.back().data()) s += v;
      expected *= s;
    }
    Tensor o = outer(vs);
    Tensor ones(o.shape(), 1.0);
    const double got = contract(o, ones, {0, 1, 2}, {0, 1, 2}).item();
    CHECK(std::abs(got - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
  }
}

TEST_CASE("property: reshape round-trip is bit-identical") {
  std::mt19937_64 rng(9);
  Tensor t = random_tensor({4, 3, 5}, rng);
  CHECK(t.reshaped({60}).reshaped({4, 3, 5}) == t);
  CHECK(t.reshaped({2, 30}).reshaped(t.shape()) == t);
  CHECK_THROWS_AS(t.reshaped({7, 9}), ShapeError);
}

TEST_CASE("binary serialization") {
  std::mt19937_64 rng(1);
  for (const Shape& s : {Shape{}, Shape{7}, Shape{2, 3, 4}}) {
    Tensor t = random_tensor(s, rng);
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_tensor(ss, t);
    CHECK(read_tensor(ss) == t);
  }

  Tensor t = Tensor::vector({1.0, -2.0});
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  // u32 order, u64 dim, two f64
  REQUIRE(bytes.size() == 4 + 8 + 16);
  CHECK(static_cast<unsigned char>(bytes[0]) == 1);
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3), std::ios::in | std::ios::binary);
  CHECK_THROWS_AS(read_tensor(truncated), FormatError);
}
