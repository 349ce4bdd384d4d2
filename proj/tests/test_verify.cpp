// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "fbo/errors.hpp"
#include "fbo/hypergrad.hpp"
#include "fbo/hyperrep.hpp"
#include "fbo/quadratic.hpp"
#include "fbo/verify.hpp"

using namespace fbo;
using namespace fbo::testing;

TEST_SUITE("verify-oracle") {

TEST_CASE("fd_hypergradient on a decoupled instance is the direct part") {
  auto inst = make_quadratic(small_spec(0.5, 70));
  std::vector<QuadraticClient> cls = inst.clients();
  for (auto& cl : cls) {
    cl.mean.B.setZero();
    for (auto& s : cl.samples) s.B.setZero();
  }
  QuadraticInstance dec(inst.d1(), inst.d2(), inst.rho_x(), cls);
  const Vec x = Vec::LinSpaced(inst.d1(), -2, 2);
  CHECK((fd_hypergradient(dec, x) - (dec.rho_x() * x + dec.e_bar())).norm() < 1e-8);
  CHECK_THROWS_AS(fd_hypergradient(dec, x, 0.0), ParameterError);
}

TEST_CASE("finite differences converge at second order (logistic head)") {
  HyperRepSpec spec;
  spec.n_points = 80;
  spec.test_points = 0;
  auto pb = make_hyperrep(spec, 3);
  Point p = pb->initial_point();
  p.y = Vec::LinSpaced(pb->dim_y(), -1, 1);
  const Vec v = Vec::LinSpaced(pb->dim_y(), 0.5, 1.5);
  const Vec exact = pb->hvp_lower_yy(0, p, v, Batch::exact());
  const double e1 = (fd_lower_hvp(*pb, 0, p, v, 2e-2) - exact).norm();
  const double e2 = (fd_lower_hvp(*pb, 0, p, v, 1e-2) - exact).norm();
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("measure_constants: exact spectrum on a diagonal instance") {
  QuadraticSample s{mat({{1, 0}, {0, 10}}), mat({{0.1}, {0.0}}), vec({0, 0}), vec({0, 0}), vec({0})};
  auto inst = single(s);
  const auto mc = measure_constants(inst, default_region(inst), 200);
  CHECK(mc.constants.mu == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mc.constants.L_g == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(mc.constants.kappa_g == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(mc.sigma_2 == 0.0);
  CHECK_THROWS_AS(measure_constants(inst, default_region(inst), 99), ParameterError);
  CHECK_THROWS_AS(default_region(inst, 0.0), ParameterError);
}

TEST_CASE("measure_constants: additive noise std 0.1 is recovered") {
  NoiseModel nm;
  nm.mode = NoiseMode::kGaussian;
  nm.std_lower = 0.1;
  QuadraticSample s{mat({{2}}), mat({{0.5}}), vec({0.2}), vec({0}), vec({0})};
  QuadraticInstance inst(1, 1, 1.0, {client_of(s)}, nm, 5);
  const auto mc = measure_constants(inst, default_region(inst), 10000, 8);
  CHECK(mc.sigma_1 >= 0.09);
  CHECK(mc.sigma_1 <= 0.11);
  CHECK(mc.constants.sigma_g >= 0.09);
  CHECK(mc.constants.sigma_g <= 0.11);
}

TEST_CASE("measure_constants: homogeneous clients have no dissimilarity") {
  auto inst = make_quadratic(small_spec(0.0, 71));
  CHECK(measure_constants(inst, default_region(inst), 100).sigma_2 == 0.0);
  auto het = make_quadratic(small_spec(0.5, 71));
  CHECK(measure_constants(het, default_region(het), 100).sigma_2 > 0.0);
}

TEST_CASE("M-hat bounds the upper gradient on the region") {
  auto inst = make_quadratic(small_spec(0.5, 72));
  const auto region = default_region(inst, 1.0);
  const auto mc = measure_constants(inst, region, 500, 1);
  QuadraticProblem pb(inst);
  const Point c = region.center;
  for (int i = 0; i < inst.m(); ++i) {
    const double gx = pb.grad_upper_x(i, c, Batch::exact()).squaredNorm();
    const double gy = pb.grad_upper_y(i, c, Batch::exact()).squaredNorm();
    CHECK(std::sqrt(gx + gy) <= mc.constants.M);
  }
}

TEST_CASE("estimator_bias_mc: deterministic estimator has zero variance") {
  auto inst = make_quadratic(small_spec(0.5, 73));
  const Vec x = Vec::Ones(inst.d1());
  const Vec truth = closed_form_hypergradient(inst, x);
  const auto mc = estimator_bias_mc([&](int) { return Vec(truth + Vec::Constant(truth.size(), 0.01)); }, inst, x, 1000);
  CHECK(mc.variance == doctest::Approx(0.0));
  CHECK(mc.bias_norm == doctest::Approx(0.01 * std::sqrt(static_cast<double>(truth.size()))));
  CHECK(mc.trials == 1000);
  CHECK_THROWS_AS(estimator_bias_mc([&](int) { return truth; }, truth, 999), ParameterError);
}

TEST_CASE("estimator_bias_mc: known mean and variance") {
  // h = truth + s e_1 with s = +-1: bias 0, variance 1
  const Vec truth = vec({1, 2, 3});
  const auto mc = estimator_bias_mc(
      [&](int t) {
        Vec h = truth;
        h(0) += (t % 2 == 0) ? 1.0 : -1.0;
        return h;
      },
      truth, 2000);
  CHECK(mc.bias_norm < 1e-12);
  CHECK(mc.variance == doctest::Approx(1.0));
}

TEST_CASE("bias of the Q-averaged estimate at y* shrinks by (1 - lambda mu)^N when N doubles") {
  QuadraticSample s{mat({{2}}), mat({{1}}), vec({0.3}), vec({1}), vec({0})};
  auto inst = single(s);
  auto pb = std::make_shared<NoiseFree>(problem_of(inst));
  const Vec x = vec({0.5});
  const Vec ystar = closed_form_lower_opt(inst, x);
  const double lambda = 0.25;
  auto bias = [&](int N) {
    const AggItdConfig cfg{lambda, N, {lambda / 6, {1}, LowerVariant::kSvrg}};
    return estimator_bias_mc(
               [&](int) {
                 Vec h = Vec::Zero(1);
                 for (int Q = 0; Q <= N; ++Q) {
                   CommLedger l;
                   h += aggitd(*pb, x, ystar, cfg, {0}, StreamFactory(0, 0), l, Q).h;
                 }
                 return Vec(h / (N + 1));
               },
               inst, x, 1000)
        .bias_norm;
  };
  const int N = 6;
  const double rate = 1 - lambda * inst.constants().mu;
  CHECK(bias(2 * N) / bias(N) == doctest::Approx(std::pow(rate, N)).epsilon(1e-6));
}

TEST_CASE("Monte-Carlo bias and variance of the indirect part sit below the bounds") {
  auto spec = small_spec(0.5, 74);
  spec.noise.mode = NoiseMode::kGaussian;
  spec.noise.std_lower = 0.2;
  spec.noise.std_upper = 0.2;
  auto inst = make_quadratic(spec);
  auto pb = problem_of(inst);
  const auto mc = measure_constants(inst, default_region(inst), 2000, 3);
  const Vec x = Vec::Zero(inst.d1());
  const Vec y0 = closed_form_lower_opt(inst, x) + Vec::Constant(inst.d2(), 0.1);
  const double gap = (y0 - closed_form_lower_opt(inst, x)).squaredNorm();
  const double lambda = 1.0 / inst.constants().L_g, beta = 1.0 / (6 * inst.constants().L_g);
  const int N = 4;
  const AggItdConfig cfg{lambda, N, {beta, {2}, LowerVariant::kSvrg}};
  const Vec exact_ind = closed_form_hypergradient(inst, x) - (inst.rho_x() * x + inst.e_bar());
  const auto est = estimator_bias_mc(
      [&](int t) {
        CommLedger l;
        return Vec(-aggitd(*pb, x, y0, cfg, all_clients(inst.m()), StreamFactory(2, static_cast<std::uint64_t>(t)), l)
                        .trace.h_indirect);
      },
      exact_ind, 4000);
  const double bias_sq_upper = std::pow(est.bias_norm + 4 * est.bias_se, 2);
  CHECK(bias_sq_upper <= aggitd_bias_bound(mc.constants, lambda, beta, N, gap));
  CHECK(aggitd_variance_bound(mc.constants, lambda, N) ==
        doctest::Approx(lambda * (N + 1) * std::pow(mc.constants.L_g * mc.constants.M, 2) / mc.constants.mu));
}

TEST_CASE("reference solvers agree with the closed forms and work on logistic heads") {
  auto inst = make_quadratic(small_spec(0.5, 75));
  auto pb = problem_of(inst);
  const Vec x = Vec::LinSpaced(inst.d1(), -1, 1);
  const Vec ys = reference_lower_opt(*pb, x, Vec::Zero(inst.d2()));
  CHECK(rel_err(ys, closed_form_lower_opt(inst, x)) < 1e-10);
  CHECK(rel_err(reference_hypergradient(*pb, x, ys), closed_form_hypergradient(inst, x)) < 1e-8);

  HyperRepSpec spec;
  spec.n_points = 80;
  spec.test_points = 0;
  auto hr = make_hyperrep(spec, 4);
  const Point p0 = hr->initial_point();
  const Vec yh = reference_lower_opt(*hr, p0.x, p0.y);
  CHECK(mean_grad_lower_y(*hr, {p0.x, yh}).norm() < 1e-9);
}

TEST_CASE("verification suite passes") {
  std::ostringstream out;
  CHECK(run_verification_suite(out, 0));
  CHECK(out.str().find("FAIL") == std::string::npos);
}

}  // TEST_SUITE
