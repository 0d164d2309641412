#include <random>

#include "doctest.h"
#include "rpr/ad/grad_check.hpp"
#include "rpr/ad/ops.hpp"
#include "rpr/ad/optimizer.hpp"

using namespace rpr;
using namespace rpr::ad;

namespace {

using AD = Array<double>;

Parameter<double>& random_param(ParameterSet<double>& ps, const std::string& name, Shape shape, std::uint64_t seed,
                                double lo = -1.0, double hi = 1.0) {
  auto& p = ps.add(name, shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < p.value.size(); ++i) p.value(i) = u(rng);
  return p;
}

/// Weighted sum with fixed random weights so every output element carries a
/// distinct adjoint.
Var<double> probe(Graph<double>& g, Var<double> y, std::uint64_t seed = 77) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  AD w(y.size());
  for (Index i = 0; i < w.size(); ++i) w(i) = n(rng);
  return sum_all(mul(y, g.constant(y.shape(), w)));
}

/// Values bounded away from 0 in magnitude, for ops with a kink at 0.
void push_from_zero(Parameter<double>& p, double gap) {
  for (Index i = 0; i < p.value.size(); ++i)
    if (std::abs(p.value(i)) < gap) p.value(i) = p.value(i) < 0 ? -gap : gap;
}

double check(ParameterSet<double>& ps, const LossFn<double>& f) { return grad_check(ps, f).max_rel_error; }

}  // namespace

TEST_CASE("sigmoid and relu values and derivatives") {
  Graph<double> g;
  const auto x = g.variable(Shape{3}, (AD(3) << 0.0, -2.0, 3.0).finished());
  const auto s = sigmoid(x);
  CHECK(s.value()(0) == doctest::Approx(0.5));
  g.backward(sum_all(s));
  CHECK(g.grad(x.id())(0) == doctest::Approx(0.25));

  Graph<double> h;
  const auto y = h.variable(Shape{3}, (AD(3) << -1.0, 0.0, 2.0).finished());
  h.backward(sum_all(relu(y)));
  CHECK(h.grad(y.id())(0) == 0.0);
  CHECK(h.grad(y.id())(1) == 0.0);
  CHECK(h.grad(y.id())(2) == 1.0);
}

TEST_CASE("pow exponent derivative matches the finite-difference oracle") {
  const auto value_at = [](double p) { return std::pow(2.0, p); };
  const double fd = (value_at(3.0 + 1e-6) - value_at(3.0 - 1e-6)) / 2e-6;
  Graph<double> g;
  const auto x = g.constant(Shape{1}, AD::Constant(1, 2.0));
  const auto p = g.variable(Shape{1}, AD::Constant(1, 3.0));
  g.backward(sum_all(pow(x, p)));
  CHECK(g.grad(p.id())(0) == doctest::Approx(fd).epsilon(1e-8));
  CHECK(g.grad(p.id())(0) == doctest::Approx(8.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("grad_check on sum of squares") {
  ParameterSet<double> ps;
  auto& x = ps.add("x", {2});
  x.value << 1.0, 2.0;
  const LossFn<double> f = [&](Graph<double>& g) {
    const auto v = g.parameter(x);
    return sum_all(mul(v, v));
  };
  Graph<double> g;
  const auto l = f(g);
  g.backward(l);
  CHECK(g.parameter_grad(x)(0) == doctest::Approx(2.0));
  CHECK(g.parameter_grad(x)(1) == doctest::Approx(4.0));
  const auto r = grad_check(ps, f);
  CHECK(r.max_rel_error <= 1e-8);
  CHECK(r.coordinates_checked == 2);
}

TEST_CASE("every op passes grad_check at 1e-6") {
  SUBCASE("add and sub with broadcasting") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {3, 4, 5}, 1);
    auto& b = random_param(ps, "b", {4, 1}, 2);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, add(g.parameter(a), g.parameter(b))); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, sub(g.parameter(b), g.parameter(a))); }) <= 1e-6);
  }
  SUBCASE("mul with broadcasting, same shape and scalar") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {2, 3, 4}, 3);
    auto& b = random_param(ps, "b", {3, 1}, 4);
    auto& c = random_param(ps, "c", {2, 3, 4}, 5);
    auto& s = random_param(ps, "s", {1}, 6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, mul(g.parameter(a), g.parameter(b))); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, mul(g.parameter(a), g.parameter(c))); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, mul(g.parameter(s), g.parameter(a))); }) <= 1e-6);
  }
  SUBCASE("scale and add_scalar") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {5, 2}, 7);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, add_scalar(scale(g.parameter(a), -1.7), 0.3)); }) <= 1e-6);
  }
  SUBCASE("relu") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {6, 4}, 8);
    push_from_zero(a, 0.05);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, relu(g.parameter(a))); }) <= 1e-6);
  }
  SUBCASE("sigmoid") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {6, 4}, 9, -3.0, 3.0);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, sigmoid(g.parameter(a))); }) <= 1e-6);
  }
  SUBCASE("sqrt and reciprocal") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {10}, 10, 0.5, 2.0);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, ad::sqrt(g.parameter(a))); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, reciprocal(g.parameter(a))); }) <= 1e-6);
  }
  SUBCASE("clamp_min") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {12}, 11);
    push_from_zero(a, 0.05);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, clamp_min(g.parameter(a), 0.0)); }) <= 1e-6);
  }
  SUBCASE("pow with learnable exponent") {
    ParameterSet<double> ps;
    auto& x = random_param(ps, "x", {4, 3}, 12, 0.2, 2.0);
    auto& p = ps.add("p", {1});
    p.value(0) = 2.7;
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, ad::pow(g.parameter(x), g.parameter(p))); }) <= 1e-6);
  }
  SUBCASE("reshape, transpose and concat") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {3, 4}, 13);
    auto& b = random_param(ps, "b", {3, 2}, 14);
    auto& c = random_param(ps, "c", {2, 4}, 15);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, reshape(g.parameter(a), Shape{2, 6})); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, transpose(g.parameter(a))); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, concat<double>({g.parameter(a), g.parameter(b)}, 1)); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, concat<double>({g.parameter(a), g.parameter(c)}, 0)); }) <= 1e-6);
  }
  SUBCASE("gather with repeated indices") {
    ParameterSet<double> ps;
    auto& src = random_param(ps, "src", {5, 3}, 16);
    IndexTable t(4, 3);
    t << 0, 1, 1, 4, 4, 4, 2, 0, 3, 1, 2, 3;
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, gather(g.parameter(src), t)); }) <= 1e-6);
  }
  SUBCASE("sum and mean over axes") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {2, 3, 4, 5}, 17);
    for (const std::vector<int>& axes : {std::vector<int>{0}, {1, 3}, {0, 1, 2}, {2}}) {
      CHECK(check(ps, [&](Graph<double>& g) { return probe(g, sum(g.parameter(a), axes)); }) <= 1e-6);
      CHECK(check(ps, [&](Graph<double>& g) { return probe(g, mean(g.parameter(a), axes)); }) <= 1e-6);
    }
    CHECK(check(ps, [&](Graph<double>& g) { return mean_all(ad::mul(g.parameter(a), g.parameter(a))); }) <= 1e-6);
  }
  SUBCASE("matmul and batched_matmul") {
    ParameterSet<double> ps;
    auto& a = random_param(ps, "a", {4, 3}, 18);
    auto& b = random_param(ps, "b", {3, 5}, 19);
    auto& x = random_param(ps, "x", {2, 3, 4}, 20);
    auto& y = random_param(ps, "y", {2, 4, 5}, 21);
    auto& z = random_param(ps, "z", {2, 3, 5}, 22);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, matmul(g.parameter(a), g.parameter(b))); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, batched_matmul(g.parameter(x), g.parameter(y))); }) <= 1e-6);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, batched_matmul(g.parameter(x), g.parameter(z), true)); }) <= 1e-6);
  }
  SUBCASE("contract") {
    ParameterSet<double> ps;
    auto& k = random_param(ps, "k", {3, 2, 2, 4}, 23);
    auto& f = random_param(ps, "f", {3, 2, 2}, 24);
    CHECK(check(ps, [&](Graph<double>& g) { return probe(g, contract("nkio,nki->no", g.parameter(k), g.parameter(f))); }) <= 1e-6);
  }
}

TEST_CASE("forward values of shape ops") {
  Graph<double> g;
  const auto a = g.constant(Shape{2, 3}, (AD(6) << 1, 2, 3, 4, 5, 6).finished());
  CHECK(transpose(a).value().isApprox((AD(6) << 1, 4, 2, 5, 3, 6).finished()));
  CHECK(sum(a, {0}).value().isApprox((AD(3) << 5, 7, 9).finished()));
  CHECK(mean(a, {1}).value().isApprox((AD(2) << 2, 5).finished()));
  const auto b = g.constant(Shape{3, 2}, (AD(6) << 1, 0, 0, 1, 1, 1).finished());
  CHECK(matmul(a, b).value().isApprox((AD(4) << 4, 5, 10, 11).finished()));
  const auto c = concat<double>({a, a}, 0);
  CHECK(c.shape() == Shape{4, 3});
  IndexTable t(1, 2);
  t << 1, 0;
  CHECK(gather(a, t).value().isApprox((AD(6) << 4, 5, 6, 1, 2, 3).finished()));
}

TEST_CASE("gather adjoint conserves gradient mass") {
  Graph<double> g;
  std::mt19937_64 rng(2);
  AD v = AD::Random(20 * 4);
  const auto src = g.variable(Shape{20, 4}, v);
  IndexTable t(15, 6);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Index>(rng() % 20);
  g.backward(sum_all(gather(src, t)));
  CHECK(g.grad(src.id()).sum() == doctest::Approx(15.0 * 6.0 * 4.0));
}

TEST_CASE("gradients accumulate when a node is reused") {
  Graph<double> g;
  const auto x = g.variable(Shape{1}, AD::Constant(1, 3.0));
  g.backward(sum_all(add(mul(x, x), scale(x, 2.0))));
  CHECK(g.grad(x.id())(0) == doctest::Approx(8.0));
}

TEST_CASE("shape mismatches throw ShapeError naming both shapes") {
  Graph<double> g;
  const auto a = g.constant(Shape{2, 3}, AD::Zero(6));
  const auto b = g.constant(Shape{4, 5}, AD::Zero(20));
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(a.shape().str()) != std::string::npos);
    CHECK(msg.find(b.shape().str()) != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(reshape(a, Shape{4}), ShapeError);
  CHECK_THROWS_AS(concat<double>({a, b}, 0), ShapeError);
  CHECK_THROWS_AS(contract("nk,nk->n", a, b), ShapeError);
  CHECK_THROWS_AS(Shape({1, 2, 3, 4, 5}), ShapeError);
  CHECK_THROWS_AS(Shape({2, 0}), ShapeError);
}

TEST_CASE("grad_check rejects non-finite losses and subsamples large parameters") {
  ParameterSet<double> ps;
  auto& x = random_param(ps, "x", {30, 30}, 4);
  const auto r = grad_check(ps, [&](Graph<double>& g) { return probe(g, ad::mul(g.parameter(x), g.parameter(x))); });
  CHECK(r.coordinates_checked == 200);
  CHECK(r.max_rel_error <= 1e-6);

  ParameterSet<double> bad;
  auto& y = bad.add("y", {2});
  y.value << -1.0, 1.0;
  CHECK_THROWS_AS(grad_check(bad, [&](Graph<double>& g) { return sum_all(ad::sqrt(g.parameter(y))); }), NumericalError);
}

TEST_CASE("RAdam zero gradient leaves parameters unchanged") {
  ParameterSet<double> ps;
  auto& x = random_param(ps, "x", {4}, 3);
  const AD before = x.value;
  RAdam<double> opt;
  for (int i = 0; i < 20; ++i) opt.step(ps, {AD::Zero(4)});
  CHECK(x.value.isApprox(before, 0.0));
  CHECK(opt.state().step == 20);
}

TEST_CASE("RAdam moves against the sign of a constant gradient") {
  ParameterSet<double> ps;
  auto& x = ps.add("x", {3});
  RAdam<double> opt;
  const AD grad = (AD(3) << 2.0, -0.5, 1e-3).finished();
  AD prev = x.value;
  for (int i = 0; i < 100; ++i) {
    opt.step(ps, {grad});
    if (i > 10) {
      const AD delta = x.value - prev;
      CHECK((delta * grad.sign() < 0).all());
      // Asymptotically every coordinate moves by the same lr-sized step.
      CHECK(std::abs(delta(0) / delta(2)) == doctest::Approx(1.0).epsilon(0.01));
    }
    prev = x.value;
  }
}

TEST_CASE("RAdam on a quadratic bowl decreases monotonically after warm-up") {
  ParameterSet<double> ps;
  auto& x = ps.add("x", {4});
  x.value << 1.5, -2.5, 3.0, -4.0;
  RAdamConfig cfg;
  cfg.lr = 1e-2;
  RAdam<double> opt(cfg);
  std::vector<double> norms;
  for (int i = 0; i < 200; ++i) {
    opt.step(ps, {2.0 * x.value});
    norms.push_back(x.value.matrix().norm());
  }
  for (std::size_t i = 10; i < norms.size(); ++i) CHECK(norms[i] < norms[i - 1]);
  // Adaptive steps are about lr per coordinate, so 200 steps shrink each |x_i| by at most ~2.
  const AD shrunk = ((AD(4) << 1.5, 2.5, 3.0, 4.0).finished() - 2.0).max(0.0);
  CHECK(norms.back() >= shrunk.matrix().norm() - 0.05);
  CHECK(norms.back() < norms.front() - 0.5);

  // Plain gradient descent as the convergence reference: both head to 0.
  AD gd = (AD(4) << 1.5, -2.5, 3.0, -4.0).finished();
  for (int i = 0; i < 200; ++i) gd -= 1e-2 * 2.0 * gd;
  CHECK(gd.matrix().norm() < norms.front());
}

TEST_CASE("RAdam rejects non-finite gradients before changing anything") {
  ParameterSet<double> ps;
  auto& a = random_param(ps, "a", {2}, 1);
  auto& b = random_param(ps, "block1.w", {2}, 2);
  const AD a0 = a.value, b0 = b.value;
  RAdam<double> opt;
  AD bad(2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step(ps, {AD::Ones(2), bad});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("block1.w") != std::string::npos);
  }
  CHECK(a.value.isApprox(a0, 0.0));
  CHECK(b.value.isApprox(b0, 0.0));
  CHECK(opt.state().step == 0);
  CHECK_THROWS_AS(opt.step(ps, {AD::Ones(2)}), InvalidArgument);
}
