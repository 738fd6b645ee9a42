// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nvf/flow.hpp"
#include "support.hpp"

using namespace nvf;
using namespace nvf::flow;
using ad::Tensor;

namespace {

struct Eval {
  Tensor value;
  Tensor logdet;
};

Eval run_inverse(FlowStack& stack, const Tensor& x, const Tensor& ctx) {
  ad::Tape t;
  auto out = stack.inverse(t, t.constant(x), t.constant(ctx));
  return {out.value.value(), out.logdet.value()};
}

Eval run_forward(FlowStack& stack, const Tensor& z, const Tensor& ctx) {
  ad::Tape t;
  auto out = stack.forward(t, t.constant(z), t.constant(ctx));
  return {out.value.value(), out.logdet.value()};
}

// Coupling whose conditioner ignores its input and emits (s, t) exactly.
AffineCoupling constant_coupling(std::size_t dim, std::size_t split, std::size_t ctx, const std::vector<double>& s,
                                 const std::vector<double>& t, Rng& rng) {
  AffineCoupling c("c", dim, split, ctx, 4, 1, rng);
  auto& last = c.conditioner().layers().back();
  for (auto& v : last.weight.value.data()) v = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    last.bias.value[i] = AffineCoupling::kScaleBound * std::atanh(s[i] / AffineCoupling::kScaleBound);
    last.bias.value[s.size() + i] = t[i];
  }
  return c;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  return p;
}

// A built stack with every parameter perturbed away from its initialization.
FlowStack random_stack(std::size_t dim, std::size_t ctx, std::size_t depth, std::uint64_t seed) {
  Rng rng(seed);
  FlowStack stack = FlowStack::build({dim, ctx, depth, 8, 2}, rng);
  for (auto* p : stack.parameters())
    for (auto& v : p->value.data()) v += 0.3 * rng.normal();
  return stack;
}

// log|det A| by Gaussian elimination with partial pivoting.

}  // namespace

TEST_CASE("affine coupling examples") {
  Rng rng(0);
  SUBCASE("identity coupling") {
    auto c = constant_coupling(2, 1, 0, {0.0}, {0.0}, rng);
    ad::Tape t;
    auto z = t.constant(Tensor::matrix(1, 2, {0.3, -1.1}));
    auto out = c.forward(t, z, empty_context(t, 1));
    CHECK(out.value.value() == z.value());
    CHECK(out.logdet.value()[0] == 0.0);
    auto inv = c.inverse(t, z, empty_context(t, 1));
    CHECK(inv.value.value() == z.value());
  }
  SUBCASE("constant scale and shift") {
    const double s = std::log(2.0), shift = 3.0;
    auto c = constant_coupling(2, 1, 0, {s}, {shift}, rng);
    ad::Tape t;
    auto out = c.forward(t, t.constant(Tensor::matrix(1, 2, {1, 2})), empty_context(t, 1));
    CHECK(out.value.value()[0] == 1.0);
    CHECK(out.value.value()[1] == doctest::Approx(2.0 * std::exp(s) + shift).epsilon(1e-14));
    CHECK(out.logdet.value()[0] == doctest::Approx(s).epsilon(1e-14));

    auto inv = c.inverse(t, t.constant(Tensor::matrix(1, 2, {1, 7})), empty_context(t, 1));
    CHECK(inv.value.value()[1] == doctest::Approx((7.0 - shift) / std::exp(s)).epsilon(1e-14));
    CHECK(inv.logdet.value()[0] == doctest::Approx(-s).epsilon(1e-14));
  }
  SUBCASE("scale is bounded") {
    auto c = AffineCoupling("c", 2, 1, 0, 4, 1, rng);
    auto& last = c.conditioner().layers().back();
    last.bias.value[0] = 1e6;
    ad::Tape t;
    auto out = c.forward(t, t.constant(Tensor::matrix(1, 2, {0, 1})), empty_context(t, 1));
    CHECK(out.logdet.value()[0] <= AffineCoupling::kScaleBound);
    CHECK(std::isfinite(out.value.value()[1]));
  }
}

TEST_CASE("lu linear examples") {
  LuLinear lu("lu", iota(2));
  lu.log_diag.value = Tensor::vector({std::log(2.0), std::log(3.0)});
  ad::Tape t;
  auto out = lu.forward(t, t.constant(Tensor::matrix(1, 2, {1, 1})));
  CHECK(out.value.value()[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(out.value.value()[1] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(out.logdet.value()[0] == doctest::Approx(std::log(2.0 * 3.0)).epsilon(1e-14));

  SUBCASE("matches the explicit matrix product") {
    Rng rng(2);
    LuLinear g("g", {2, 0, 1});
    for (auto* p : g.parameters())
      for (auto& v : p->value.data()) v = rng.normal();
    // Independent reconstruction of P L U.
    double L[3][3] = {}, U[3][3] = {}, W[3][3] = {};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        L[i][j] = i == j ? 1.0 : (j < i ? g.lower.value.at(i, j) : 0.0);
        U[i][j] = i == j ? std::exp(g.log_diag.value[i]) : (j > i ? g.upper.value.at(i, j) : 0.0);
      }
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) W[i][j] += L[i][k] * U[k][j];
    const Tensor z = Tensor::matrix(1, 3, {0.4, -1.0, 2.0});
    double w[3] = {};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) w[i] += W[i][j] * z[j];
    ad::Tape tp;
    auto y = g.forward(tp, tp.constant(z)).value.value();
    const auto& perm = g.permutation();
    for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(w[perm[i]]).epsilon(1e-13));
  }
}

TEST_CASE("reverse permutation is an involution") {
  ReversePermutation r(3);
  ad::Tape t;
  auto x = t.constant(Tensor::matrix(1, 3, {1, 2, 3}));
  auto once = r.forward(t, x);
  CHECK(once.value.value() == Tensor::matrix(1, 3, {3, 2, 1}));
  CHECK(r.inverse(t, once.value).value.value() == x.value());
  CHECK(once.logdet.value()[0] == 0.0);
}

TEST_CASE("stack examples") {
  SUBCASE("empty stack") {
    FlowStack s(2, 0);
    const Tensor x = Tensor::matrix(1, 2, {0.5, -0.25});
    auto inv = run_inverse(s, x, Tensor::zeros({1, 0}));
    CHECK(inv.value == x);
    CHECK(inv.logdet[0] == 0.0);
    auto fwd = run_forward(s, x, Tensor::zeros({1, 0}));
    CHECK(fwd.value == x);
    CHECK(fwd.logdet[0] == 0.0);
  }
  SUBCASE("logdets add") {
    Rng rng(1);
    const double v = 0.4;
    FlowStack s(2, 0);
    s.push(constant_coupling(2, 1, 0, {v}, {0.0}, rng));
    s.push(constant_coupling(2, 1, 0, {v}, {0.0}, rng));
    auto inv = run_inverse(s, Tensor::matrix(1, 2, {0.1, 0.2}), Tensor::zeros({1, 0}));
    CHECK(inv.logdet[0] == doctest::Approx(-2.0 * v).epsilon(1e-14));
  }
  SUBCASE("conditional log prob of the base measure") {
    FlowStack s1(1, 0), s2(2, 0);
    ad::Tape t;
    auto lp1 = s1.conditional_log_prob(t, t.constant(Tensor::matrix(1, 1, {0})), empty_context(t, 1));
    CHECK(lp1.value()[0] == doctest::Approx(test::std_normal_logpdf(0.0)).epsilon(1e-15));
    auto lp2 = s2.conditional_log_prob(t, t.constant(Tensor::matrix(1, 2, {0, 0})), empty_context(t, 1));
    CHECK(lp2.value()[0] == doctest::Approx(2.0 * test::std_normal_logpdf(0.0)).epsilon(1e-15));
  }
  SUBCASE("shift coupling translates the density") {
    Rng rng(4);
    const double mu = 1.75;
    FlowStack s(2, 0);
    s.push(constant_coupling(2, 1, 0, {0.0}, {mu}, rng));
    const double x0 = -0.3, x1 = 0.6;
    ad::Tape t;
    auto lp = s.conditional_log_prob(t, t.constant(Tensor::matrix(1, 2, {x0, x1})), empty_context(t, 1));
    CHECK(lp.value()[0] ==
          doctest::Approx(test::std_normal_logpdf(x0) + test::std_normal_logpdf(x1 - mu)).epsilon(1e-14));
  }
}

TEST_CASE("one-dimensional coupling conditions on context alone") {
  CHECK(default_split(1) == 0);
  CHECK(default_split(2) == 1);
  CHECK(default_split(5) == 2);
  Rng rng(0);
  auto c = constant_coupling(1, 0, 2, {0.5}, {-1.0}, rng);
  ad::Tape t;
  auto out = c.forward(t, t.constant(Tensor::matrix(1, 1, {2.0})), t.constant(Tensor::matrix(1, 2, {1, 0})));
  CHECK(out.value.value()[0] == doctest::Approx(2.0 * std::exp(0.5) - 1.0));
}

TEST_CASE("round trip over random inputs") {
  for (std::size_t dim : {1u, 2u, 4u}) {
    CAPTURE(dim);
    const std::size_t ctx = 3, n = 1000;
    FlowStack stack = random_stack(dim, ctx, 4, 100 + dim);
    Rng rng(7);
    const Tensor z = test::random_tensor({n, dim}, rng);
    const Tensor c = test::random_tensor({n, ctx}, rng);
    auto fwd = run_forward(stack, z, c);
    auto back = run_inverse(stack, fwd.value, c);
    double err = 0.0, ld = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) err = std::max(err, std::abs(back.value[i] - z[i]));
    for (std::size_t i = 0; i < n; ++i) ld = std::max(ld, std::abs(fwd.logdet[i] + back.logdet[i]));
    CHECK(err < 1e-9);
    CHECK(ld < 1e-10);

    const Tensor x = test::random_tensor({n, dim}, rng);
    auto inv = run_inverse(stack, x, c);
    auto again = run_forward(stack, inv.value, c);
    err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(again.value[i] - x[i]));
    CHECK(err < 1e-9);
  }
}

TEST_CASE("analytic logdet matches the finite-difference Jacobian") {
  for (std::size_t dim : {2u, 4u}) {
    CAPTURE(dim);
    FlowStack stack = random_stack(dim, 2, 4, 200 + dim);
    Rng rng(9);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x = test::random_tensor({1, dim}, rng);
      const Tensor c = test::random_tensor({1, 2}, rng);
      std::vector<std::vector<double>> jac(dim, std::vector<double>(dim));
      for (std::size_t j = 0; j < dim; ++j) {
        Tensor xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const auto zp = run_inverse(stack, xp, c).value;
        const auto zm = run_inverse(stack, xm, c).value;
        for (std::size_t i = 0; i < dim; ++i) jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
      }
      const double numeric = test::log_abs_det(jac);
      const double analytic = run_inverse(stack, x, c).logdet[0];
      CHECK(std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)) < 1e-3);
    }
  }
}

TEST_CASE("conditional log prob gradients") {
  for (std::size_t dim : {1u, 2u, 3u}) {
    CAPTURE(dim);
    FlowStack stack = random_stack(dim, 2, 2, 300 + dim);
    Rng rng(10);
    const Tensor x = test::random_tensor({3, dim}, rng);
    const Tensor c = test::random_tensor({3, 2}, rng);
    auto params = stack.parameters();
    const double wrt_params = ad::finite_diff_check(
        [&](ad::Tape& t) { return ad::sum(stack.conditional_log_prob(t, t.constant(x), t.constant(c))); }, params,
        1e-5);
    CHECK(wrt_params < 1e-4);
    const double wrt_context = ad::finite_diff_check(
        [&](ad::Var ctx) { return ad::sum(stack.conditional_log_prob(*ctx.tape, ctx.tape->constant(x), ctx)); }, c,
        1e-5);
    CHECK(wrt_context < 1e-4);
    const double wrt_x = ad::finite_diff_check(
        [&](ad::Var xv) { return ad::sum(stack.conditional_log_prob(*xv.tape, xv, xv.tape->constant(c))); }, x, 1e-5);
    CHECK(wrt_x < 1e-4);
  }
}

TEST_CASE("context changes the density") {
  FlowStack stack = random_stack(2, 3, 3, 400);
  Rng rng(12);
  const Tensor x = test::random_tensor({5, 2}, rng);
  ad::Tape t;
  auto ctx = t.input(test::random_tensor({5, 3}, rng, 0.5));
  t.backward(ad::sum(stack.conditional_log_prob(t, t.constant(x), ctx)));
  const auto g = t.grad(ctx);
  double norm = 0.0;
  for (double v : g.values()) norm += v * v;
  CHECK(norm > 1e-8);
}

TEST_CASE("fresh stacks start at the identity coupling") {
  Rng rng(0);
  FlowStack stack = FlowStack::build({2, 0, 3, 8, 2}, rng);
  std::size_t couplings = 0;
  for (auto& layer : stack.layers()) {
    if (auto* c = std::get_if<AffineCoupling>(&layer)) {
      ++couplings;
      for (double v : c->conditioner().layers().back().weight.value.values()) CHECK(v == 0.0);
    }
  }
  CHECK(couplings == 3);
  CHECK(stack.layers().size() == 9);
}

TEST_CASE("shape errors") {
  FlowStack stack = random_stack(2, 1, 1, 0);
  ad::Tape t;
  CHECK_THROWS_AS(stack.inverse(t, t.constant(Tensor::zeros({1, 3})), t.constant(Tensor::zeros({1, 1}))),
                  ad::ShapeError);
  CHECK_THROWS_AS(stack.inverse(t, t.constant(Tensor::zeros({1, 2})), t.constant(Tensor::zeros({2, 1}))),
                  ad::ShapeError);
}
