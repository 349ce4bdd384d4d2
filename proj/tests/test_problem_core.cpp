// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "fbo/errors.hpp"
#include "fbo/problem.hpp"
#include "fbo/quadratic.hpp"
#include "fbo/rng.hpp"
#include "fbo/verify.hpp"

using namespace fbo;
using namespace fbo::testing;

TEST_SUITE("problem-core") {

TEST_CASE("grad_lower_y on a 1-D quadratic") {
  // g = 1/2 * 2 y^2 + 1 * x y; grad = a y + b x = 2*3 + 1 = 7
  QuadraticProblem pb(single({mat({{2}}), mat({{1}}), vec({0}), vec({0}), vec({0})}));
  CHECK(pb.grad_lower_y(0, {vec({1}), vec({3})}, Batch::exact())(0) == doctest::Approx(7.0));
}

TEST_CASE("aggregate lower gradient vanishes at y*") {
  auto inst = make_quadratic(small_spec(0.7));
  QuadraticProblem pb(inst);
  const Vec x = Vec::LinSpaced(inst.d1(), -1, 1);
  const Vec g = mean_grad_lower_y(pb, {x, closed_form_lower_opt(inst, x)});
  CHECK(g.norm() < 1e-10);
}

TEST_CASE("finite-sum batch over both samples averages the gradients") {
  QuadraticSample s1{mat({{1}}), mat({{0}}), vec({1}), vec({0}), vec({0})};
  QuadraticSample s2{mat({{1}}), mat({{0}}), vec({-1}), vec({0}), vec({0})};
  QuadraticSample mean{mat({{1}}), mat({{0}}), vec({0}), vec({0}), vec({0})};
  QuadraticProblem pb(QuadraticInstance(1, 1, 1.0, {{mean, {s1, s2}}}));
  const Point p{vec({0.5}), vec({0})};
  CHECK(pb.grad_lower_y(0, p, Batch::of_samples({0}))(0) == doctest::Approx(1.0));
  CHECK(pb.grad_lower_y(0, p, Batch::of_samples({1}))(0) == doctest::Approx(-1.0));
  CHECK(pb.grad_lower_y(0, p, Batch::of_samples({0, 1}))(0) == 0.0);
}

TEST_CASE("grad_upper_x examples") {
  QuadraticProblem pb(single({mat({{1}}), mat({{0, 0}}), vec({0}), vec({0}), vec({0, 0})}, 1.0));
  const Vec g = pb.grad_upper_x(0, {vec({2, 0}), vec({0})}, Batch::exact());
  CHECK(g(0) == 2.0);
  CHECK(g(1) == 0.0);
  CHECK(pb.grad_upper_x(0, {vec({0, 0}), vec({0})}, Batch::exact()).norm() == 0.0);

  // f_i = e_i' x with e = +1 / -1 cancels in the aggregate
  QuadraticSample a{mat({{1}}), mat({{0}}), vec({0}), vec({0}), vec({1})};
  QuadraticSample b = a;
  b.e = vec({-1});
  QuadraticProblem two(QuadraticInstance(1, 1, 0.0, {client_of(a), client_of(b)}));
  CHECK(mean_grad_upper_x(two, {vec({3.7}), vec({-2})})(0) == 0.0);
}

TEST_CASE("grad_upper_y examples") {
  QuadraticProblem pb(single({mat({{1, 0}, {0, 1}}), mat({{0}, {0}}), vec({0, 0}), vec({1, 1}), vec({0})}));
  const Vec g = pb.grad_upper_y(0, {vec({0}), vec({0, 0})}, Batch::exact());
  CHECK(g(0) == -1.0);
  CHECK(g(1) == -1.0);
  CHECK(pb.grad_upper_y(0, {vec({0}), vec({1, 1})}, Batch::exact()).norm() == 0.0);
}

TEST_CASE("additive noise on grad_upper_y is unbiased (Monte-Carlo)") {
  NoiseModel nm;
  nm.mode = NoiseMode::kGaussian;
  nm.std_upper = 0.1;
  QuadraticSample s{mat({{1}}), mat({{0}}), vec({0}), vec({0.25}), vec({0})};
  QuadraticProblem pb(QuadraticInstance(1, 1, 1.0, {client_of(s)}, nm, 9));
  const Point p{vec({0}), vec({1})};
  const double exact = pb.grad_upper_y(0, p, Batch::exact())(0);
  const int n = 1000000;
  double acc = 0.0;
  for (int t = 0; t < n; ++t) {
    acc += pb.grad_upper_y(0, p, Batch(RngStream(9, Lane{0, Purpose::kUpperGradY, 0, static_cast<std::uint64_t>(t)})))(0);
  }
  CHECK(std::abs(acc / n - exact) <= 3 * 0.1 / 1e3);
}

TEST_CASE("hvp_lower_yy examples") {
  QuadraticProblem pb(single({mat({{2, 0}, {0, 3}}), mat({{0}, {0}}), vec({0, 0}), vec({0, 0}), vec({0})}));
  const Point p{vec({0}), vec({0, 0})};
  const Vec h = pb.hvp_lower_yy(0, p, vec({1, 1}), Batch::exact());
  CHECK(h(0) == 2.0);
  CHECK(h(1) == 3.0);
  CHECK(pb.hvp_lower_yy(0, p, vec({0, 0}), Batch::exact()).norm() == 0.0);
}

TEST_CASE("jvp_lower_xy examples") {
  QuadraticProblem pb(single({mat({{1}}), mat({{1, 2}}), vec({0}), vec({0}), vec({0, 0})}));
  const Point p{vec({0, 0}), vec({0})};
  const Vec j = pb.jvp_lower_xy(0, p, vec({1}), Batch::exact());
  CHECK(j(0) == 1.0);
  CHECK(j(1) == 2.0);
  CHECK(pb.jvp_lower_xy(0, p, vec({0}), Batch::exact()).norm() == 0.0);
}

TEST_CASE("hvp and jvp agree with finite differences") {
  auto inst = make_quadratic(small_spec(0.5, 11));
  QuadraticProblem pb(inst);
  const Point p{Vec::LinSpaced(inst.d1(), 0.3, -0.7), Vec::LinSpaced(inst.d2(), 1.0, 2.0)};
  for (int i = 0; i < inst.m(); ++i) {
    const Vec v = Vec::LinSpaced(inst.d2(), -1, 2);
    CHECK(rel_err(pb.hvp_lower_yy(i, p, v, Batch::exact()), fd_lower_hvp(pb, i, p, v)) < 1e-6);
    CHECK(rel_err(pb.jvp_lower_xy(i, p, v, Batch::exact()), fd_lower_jvp(pb, i, p, v)) < 1e-6);
  }
}

TEST_CASE("contract errors") {
  QuadraticProblem pb(single({mat({{1}}), mat({{1, 2}}), vec({0}), vec({0}), vec({0, 0})}));
  CHECK_THROWS_AS(pb.grad_lower_y(0, {vec({0}), vec({0})}, Batch::exact()), ContractError);
  CHECK_THROWS_AS(pb.hvp_lower_yy(0, {vec({0, 0}), vec({0})}, vec({1, 1}), Batch::exact()), ContractError);
  CHECK_THROWS_AS(pb.grad_upper_y(1, {vec({0, 0}), vec({0})}, Batch::exact()), LookupError);
  CHECK_THROWS_AS(pb.grad_upper_y(-1, {vec({0, 0}), vec({0})}, Batch::exact()), LookupError);
}

TEST_CASE("unbiasedness: the full finite sum equals the noise-off value") {
  auto inst = make_quadratic(small_spec(0.5, 4));
  QuadraticProblem pb(inst);
  const Point p{Vec::Constant(inst.d1(), 0.4), Vec::Constant(inst.d2(), -0.2)};
  const Vec v = Vec::LinSpaced(inst.d2(), 1, 2);
  std::vector<int> all(static_cast<std::size_t>(inst.client(0).samples.size()));
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  for (int i = 0; i < inst.m(); ++i) {
    const Batch full = Batch::of_samples(all);
    CHECK((pb.grad_lower_y(i, p, full) - pb.grad_lower_y(i, p, Batch::exact())).norm() < 1e-12);
    CHECK((pb.grad_upper_x(i, p, full) - pb.grad_upper_x(i, p, Batch::exact())).norm() < 1e-12);
    CHECK((pb.grad_upper_y(i, p, full) - pb.grad_upper_y(i, p, Batch::exact())).norm() < 1e-12);
    CHECK((pb.hvp_lower_yy(i, p, v, full) - pb.hvp_lower_yy(i, p, v, Batch::exact())).norm() < 1e-12);
    CHECK((pb.jvp_lower_xy(i, p, v, full) - pb.jvp_lower_xy(i, p, v, Batch::exact())).norm() < 1e-12);
  }
}

TEST_CASE("every sampled Hessian lies in [mu, L_g]") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto spec = small_spec(1.0, seed);
    spec.spread = 0.9;
    auto inst = make_quadratic(spec);
    for (const auto& cl : inst.clients()) {
      for (const auto& s : cl.samples) {
        const Vec ev = sym_eigenvalues(s.A);
        CHECK(ev.minCoeff() >= spec.mu - 1e-9);
        CHECK(ev.maxCoeff() <= spec.L_g + 1e-9);
      }
    }
  }
}

TEST_CASE("identical (seed, lane) gives bit-identical draws; lanes differ") {
  auto spec = small_spec(0.5, 2);
  spec.noise.batch = 2;
  QuadraticProblem pb(make_quadratic(spec));
  const Point p{Vec::Ones(4), Vec::Ones(5)};
  const RngStream s(42, Lane{1, Purpose::kLowerGrad, 3, 0});
  CHECK(pb.grad_lower_y(1, p, Batch(s)) == pb.grad_lower_y(1, p, Batch(s)));
  int differ = 0;
  for (std::uint64_t t = 0; t < 10; ++t) {
    const RngStream other(42, Lane{1, Purpose::kLowerGrad, 3, t + 1});
    differ += pb.grad_lower_y(1, p, Batch(s)) != pb.grad_lower_y(1, p, Batch(other));
  }
  CHECK(differ > 0);

  Generator a = RngStream(7, Lane{0, Purpose::kLowerHvp, 1, 2}).generator();
  Generator b = RngStream(7, Lane{0, Purpose::kLowerHvp, 1, 2}).generator();
  Generator c = RngStream(7, Lane{0, Purpose::kLowerJvp, 1, 2}).generator();
  const std::uint64_t va = a.next_u64();
  CHECK(va == b.next_u64());
  CHECK(va != c.next_u64());
}

TEST_CASE("hvp and jvp are linear for a fixed batch") {
  auto inst = make_quadratic(small_spec(0.5, 6));
  QuadraticProblem pb(inst);
  const Point p{Vec::Ones(inst.d1()), Vec::Zero(inst.d2())};
  const Batch b(RngStream(5, Lane{2, Purpose::kLowerHvp, 0, 0}));
  const Vec u = Vec::LinSpaced(inst.d2(), -1, 1);
  const Vec v = Vec::LinSpaced(inst.d2(), 2, 0.5);
  const double al = 1.7, be = -0.3;
  CHECK((pb.hvp_lower_yy(2, p, al * u + be * v, b) - (al * pb.hvp_lower_yy(2, p, u, b) + be * pb.hvp_lower_yy(2, p, v, b)))
            .norm() < 1e-12);
  CHECK((pb.jvp_lower_xy(2, p, al * u + be * v, b) - (al * pb.jvp_lower_xy(2, p, u, b) + be * pb.jvp_lower_xy(2, p, v, b)))
            .norm() < 1e-12);
}

TEST_CASE("ProblemConstants::make") {
  const auto c = ProblemConstants::make(2.0, 10.0, 1.0, 1.0, 0.0, 0.0, 0.0);
  CHECK(c.kappa_g == 10.0 / 2.0);
  CHECK_THROWS_AS(ProblemConstants::make(0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0), ParameterError);
  CHECK_THROWS_AS(ProblemConstants::make(2.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0), ParameterError);
}

}  // TEST_SUITE
