// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "fbo/errors.hpp"
#include "fbo/hyperrep.hpp"
#include "fbo/lower_solver.hpp"
#include "fbo/quadratic.hpp"

using namespace fbo;
using namespace fbo::testing;

namespace {

Vec exact_aggregate_gradient(const BilevelProblem& pb, const Vec& x, const Vec& y) {
  return mean_grad_lower_y(pb, {x, y});
}

}  // namespace

TEST_SUITE("lower-solver") {

TEST_CASE("one local step: the correction cancels") {
  auto inst = make_quadratic(small_spec(0.7, 2));
  auto pb = problem_of(inst);
  const Vec x = Vec::LinSpaced(inst.d1(), -1, 1);
  const Vec y = Vec::LinSpaced(inst.d2(), 0.5, 1.5);
  const Vec q = Vec::LinSpaced(inst.d2(), 2, -2);
  const StreamFactory sf(4, 0);
  CommLedger ledger;
  const auto parts = all_clients(inst.m());
  const Vec yp = one_round_lower(*pb, x, y, q, {0.05, {1}, LowerVariant::kSvrg}, parts, sf, 0, ledger);
  CHECK((yp - (y - 0.05 * q)).norm() < 1e-14);
  CHECK(ledger.rounds_total == 1);

  // sgd with the exact aggregate gradient as q, noise off
  NoiseFree nf(pb);
  const Vec g = exact_aggregate_gradient(nf, x, y);
  const Vec ys = one_round_lower(nf, x, y, g, {0.05, {1}, LowerVariant::kSgd}, parts, sf, 0, ledger);
  CHECK((ys - (y - 0.05 * g)).norm() < 1e-13);
}

TEST_CASE("homogeneous clients, noise off: svrg and sgd coincide") {
  auto pb = std::make_shared<NoiseFree>(problem_of(make_quadratic(small_spec(0.0, 3))));
  const Vec x = Vec::Ones(pb->dim_x());
  const Vec y = Vec::Zero(pb->dim_y());
  const Vec q = exact_aggregate_gradient(*pb, x, y);
  const StreamFactory sf(1, 0);
  CommLedger ledger;
  const auto parts = all_clients(pb->num_clients());
  const Vec a = one_round_lower(*pb, x, y, q, {0.03, {4}, LowerVariant::kSvrg}, parts, sf, 0, ledger);
  const Vec b = one_round_lower(*pb, x, y, q, {0.03, {4}, LowerVariant::kSgd}, parts, sf, 0, ledger);
  CHECK((a - b).norm() < 1e-13);
}

TEST_CASE("local stepsize is beta / tau") {
  // one client, g = 1/2 a y^2: tau corrected steps give (1 - beta a / tau)^tau y
  auto pb = problem_of(single({mat({{3}}), mat({{0}}), vec({0}), vec({0}), vec({0})}));
  const Vec x = vec({0}), y = vec({2});
  CommLedger ledger;
  for (int tau : {1, 2, 5}) {
    const Vec q = exact_aggregate_gradient(*pb, x, y);
    const Vec yp = one_round_lower(*pb, x, y, q, {0.1, {tau}, LowerVariant::kSvrg}, {0}, StreamFactory(0, 0), 0, ledger);
    CHECK(yp(0) == doctest::Approx(std::pow(1.0 - 0.3 / tau, tau) * 2.0).epsilon(1e-14));
  }
}

TEST_CASE("noise-off contraction per composed round on a heterogeneous quadratic") {
  auto inst = make_quadratic(small_spec(0.8, 13));
  auto pb = std::make_shared<NoiseFree>(problem_of(inst));
  const double mu = inst.constants().mu;
  const double beta = 1.0 / (6.0 * inst.constants().L_g);
  const Vec x = Vec::LinSpaced(inst.d1(), -2, 2);
  const Vec ystar = closed_form_lower_opt(inst, x);
  const auto parts = all_clients(inst.m());
  for (int tau : {1, 3, 8}) {
    Vec y = Vec::Constant(inst.d2(), 4.0);
    CommLedger ledger;
    for (int t = 0; t < 15; ++t) {
      const double before = (y - ystar).norm();
      const Vec q = aggregate_mean(local_lower_gradients(*pb, {x, y}, parts, StreamFactory(0, 0), t), ledger);
      y = one_round_lower(*pb, x, y, q, {beta, {tau}, LowerVariant::kSvrg}, parts, StreamFactory(0, 0), t, ledger);
      CHECK((y - ystar).norm() <= std::sqrt(1.0 - beta * mu / 2.0) * before + 1e-14);
    }
  }
}

TEST_CASE("tau below one is rejected") {
  auto pb = problem_of(make_quadratic(small_spec(0.5)));
  CommLedger ledger;
  const Vec x = Vec::Zero(pb->dim_x()), y = Vec::Zero(pb->dim_y());
  CHECK_THROWS_AS(one_round_lower(*pb, x, y, y, {0.01, {0}, LowerVariant::kSvrg}, {0}, StreamFactory(0, 0), 0, ledger),
                  ParameterError);
  CHECK_THROWS_AS(LowerStepConfig({0.01, {1, 2}, LowerVariant::kSvrg}).validate(4), ParameterError);
  CHECK_NOTHROW(LowerStepConfig({0.01, {1, 2, 3, 4}, LowerVariant::kSvrg}).validate(4));
}

TEST_CASE("svrg fixed point: y = y*, q = 0 stays put under sampling") {
  auto inst = make_quadratic(small_spec(0.9, 14));
  auto pb = problem_of(inst);
  const Vec x = Vec::LinSpaced(inst.d1(), 0, 1);
  const Vec ystar = closed_form_lower_opt(inst, x);
  CommLedger ledger;
  const Vec yp = one_round_lower(*pb, x, ystar, Vec::Zero(inst.d2()), {0.02, {5}, LowerVariant::kSvrg},
                                 all_clients(inst.m()), StreamFactory(9, 1), 3, ledger);
  CHECK(yp == ystar);
}

TEST_CASE("deterministic by seed and invariant to participant order") {
  auto pb = problem_of(make_quadratic(small_spec(0.5, 15)));
  const Vec x = Vec::Ones(pb->dim_x()), y = Vec::Zero(pb->dim_y());
  const Vec q = Vec::Constant(pb->dim_y(), 0.3);
  const LowerStepConfig cfg{0.02, {1, 2, 3, 4}, LowerVariant::kSvrg};
  CommLedger ledger;
  const Vec a = one_round_lower(*pb, x, y, q, cfg, {0, 1, 2, 3}, StreamFactory(8, 2), 1, ledger);
  const Vec b = one_round_lower(*pb, x, y, q, cfg, {0, 1, 2, 3}, StreamFactory(8, 2), 1, ledger);
  const Vec c = one_round_lower(*pb, x, y, q, cfg, {3, 1, 0, 2}, StreamFactory(8, 2), 1, ledger);
  CHECK(a == b);
  CHECK((a - c).norm() <= 1e-14 * std::max(1.0, a.norm()));
}

TEST_CASE("run_lower_loop: N+1 iterates and 2N rounds") {
  auto pb = problem_of(make_quadratic(small_spec(0.5, 16)));
  for (int N : {0, 1, 4}) {
    CommLedger ledger;
    const auto ys = run_lower_loop(*pb, Vec::Zero(pb->dim_x()), Vec::Zero(pb->dim_y()), N, {0.02, {2}, LowerVariant::kSvrg},
                                   all_clients(pb->num_clients()), StreamFactory(1, 0), ledger);
    CHECK(static_cast<int>(ys.size()) == N + 1);
    CHECK(ledger.rounds_total == 2 * N);
  }
}

TEST_CASE("lower_gap examples") {
  auto inst = make_quadratic(small_spec(0.5, 17));
  auto pb = problem_of(inst);
  const Vec x = Vec::LinSpaced(inst.d1(), 1, 3);
  CHECK(lower_gap(*pb, x, closed_form_lower_opt(inst, x)) == 0.0);

  QuadraticSample s{Mat::Identity(2, 2), Mat::Zero(2, 3), vec({0, 0}), vec({0, 0}), vec({0, 0, 0})};
  auto iso = problem_of(single(s));
  CHECK(lower_gap(*iso, vec({5, -1, 2}), vec({3, 4})) == doctest::Approx(25.0));

  HyperRepSpec hs;
  hs.n_points = 40;
  hs.test_points = 0;
  auto hr = make_hyperrep(hs, 1);
  CHECK_THROWS_AS(lower_gap(*hr, hr->initial_point().x, hr->initial_point().y), UnsupportedError);
}

TEST_CASE("lower_gap is nonincreasing along noise-off solver iterates") {
  auto inst = make_quadratic(small_spec(0.6, 18));
  auto pb = std::make_shared<NoiseFree>(problem_of(inst));
  const Vec x = Vec::LinSpaced(inst.d1(), -1, 1);
  CommLedger ledger;
  const auto ys = run_lower_loop(*pb, x, Vec::Constant(inst.d2(), 3.0), 25,
                                 {1.0 / (6 * inst.constants().L_g), {3}, LowerVariant::kSvrg}, all_clients(inst.m()),
                                 StreamFactory(0, 0), ledger);
  for (std::size_t t = 1; t < ys.size(); ++t) CHECK(lower_gap(*pb, x, ys[t]) <= lower_gap(*pb, x, ys[t - 1]));
}

}  // TEST_SUITE
