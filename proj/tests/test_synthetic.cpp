// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "fbo/errors.hpp"
#include "fbo/hyperrep.hpp"
#include "fbo/quadratic.hpp"
#include "fbo/serialize.hpp"
#include "fbo/verify.hpp"

using namespace fbo;
using namespace fbo::testing;

namespace {

bool is_set_partition(const std::vector<std::vector<int>>& parts, int n) {
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (const auto& p : parts)
    for (int k : p) {
      if (k < 0 || k >= n) return false;
      ++seen[static_cast<std::size_t>(k)];
    }
  return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
}

// Per-client implicit hypergradient from the client's own blocks.
Vec client_hypergradient(const QuadraticSample& s, double rho_x, const Vec& x) {
  const Eigen::LLT<Mat> llt(s.A);
  const Vec y = -llt.solve(s.B * x + s.c);
  return rho_x * x + s.e - s.B.transpose() * llt.solve(y - s.d);
}

}  // namespace

TEST_SUITE("synthetic-suite") {

TEST_CASE("hetero = 0 gives identical clients") {
  auto spec = small_spec(0.0);
  auto inst = make_quadratic(spec);
  for (const auto& cl : inst.clients()) {
    CHECK(cl.mean.A == inst.client(0).mean.A);
    CHECK(cl.mean.B == inst.client(0).mean.B);
    CHECK(cl.mean.c == inst.client(0).mean.c);
    CHECK(cl.mean.d == inst.client(0).mean.d);
    CHECK(cl.mean.e == inst.client(0).mean.e);
  }
  CHECK(hessian_dissimilarity(inst) == 0.0);
}

TEST_CASE("spectrum of every sampled Hessian within [1, 10]") {
  QuadraticSpec spec;
  spec.mu = 1.0;
  spec.L_g = 10.0;
  spec.hetero = 1.0;
  spec.spread = 0.8;
  auto inst = make_quadratic(spec);
  double lo = 1e300, hi = 0.0;
  for (const auto& cl : inst.clients()) {
    for (const auto& s : cl.samples) {
      const Vec ev = sym_eigenvalues(s.A);
      lo = std::min(lo, ev.minCoeff());
      hi = std::max(hi, ev.maxCoeff());
    }
  }
  CHECK(lo >= 1.0 - 1e-9);
  CHECK(hi <= 10.0 + 1e-9);
}

TEST_CASE("A_bar is the mean of the client Hessians") {
  auto inst = make_quadratic(small_spec(0.8));
  Mat acc = Mat::Zero(inst.d2(), inst.d2());
  for (const auto& cl : inst.clients()) acc += cl.mean.A;
  CHECK((acc / inst.m() - inst.A_bar()).norm() < 1e-12);
}

TEST_CASE("same seed, same instance") {
  const auto a = instance_to_json(make_quadratic(small_spec(0.5, 77))).dump();
  const auto b = instance_to_json(make_quadratic(small_spec(0.5, 77))).dump();
  const auto c = instance_to_json(make_quadratic(small_spec(0.5, 78))).dump();
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("dissimilarity grows with the hetero knob") {
  double prev = -1.0;
  for (double h : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double d = hessian_dissimilarity(make_quadratic(small_spec(h, 5)));
    CHECK(d >= prev);
    prev = d;
  }
  CHECK(prev > 0.0);
}

TEST_CASE("infeasible specs are rejected") {
  auto s = small_spec(0.5);
  s.mu = 0.0;
  CHECK_THROWS_AS(make_quadratic(s), ParameterError);
  s = small_spec(0.5);
  s.L_g = 0.5;
  CHECK_THROWS_AS(make_quadratic(s), ParameterError);
  s = small_spec(1.5);
  CHECK_THROWS_AS(make_quadratic(s), ParameterError);
}

TEST_CASE("closed_form_lower_opt examples") {
  QuadraticSample s{Mat::Identity(2, 2), Mat::Zero(2, 1), vec({-1, -2}), vec({0, 0}), vec({0})};
  const Vec y = closed_form_lower_opt(single(s), vec({5}));
  CHECK(y(0) == doctest::Approx(1.0));
  CHECK(y(1) == doctest::Approx(2.0));

  auto inst = make_quadratic(small_spec(0.5));
  QuadraticSample z = inst.client(0).mean;
  z.c.setZero();
  CHECK(closed_form_lower_opt(single(z), Vec::Zero(inst.d1())).norm() == 0.0);
}

TEST_CASE("closed_form_lower_opt agrees with long gradient descent") {
  auto inst = make_quadratic(small_spec(0.6, 21));
  const Vec x = Vec::LinSpaced(inst.d1(), -0.5, 0.5);
  Vec y = Vec::Zero(inst.d2());
  const double step = 1.0 / 5.0;
  for (int t = 0; t < 10000; ++t) y -= step * (inst.A_bar() * y + inst.B_bar() * x + inst.c_bar());
  CHECK((y - closed_form_lower_opt(inst, x)).norm() < 1e-8);
}

TEST_CASE("closed_form_hypergradient examples") {
  // decoupled: pure direct part
  auto inst = make_quadratic(small_spec(0.5));
  std::vector<QuadraticClient> cls = inst.clients();
  for (auto& cl : cls) {
    cl.mean.B.setZero();
    for (auto& s : cl.samples) s.B.setZero();
  }
  QuadraticInstance dec(inst.d1(), inst.d2(), inst.rho_x(), cls);
  const Vec x = Vec::LinSpaced(inst.d1(), 1, 2);
  CHECK((closed_form_hypergradient(dec, x) - (dec.rho_x() * x + dec.e_bar())).norm() < 1e-12);

  // 1-D, a=2 b=1 c=0 d=0 rho_x=1 e=0 at x=1
  QuadraticSample s{mat({{2}}), mat({{1}}), vec({0}), vec({0}), vec({0})};
  CHECK(closed_form_hypergradient(single(s, 1.0), vec({1}))(0) == doctest::Approx(1.25));
}

TEST_CASE("closed_form_hypergradient matches finite differences on 100 pairs") {
  std::mt19937_64 eng(1);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    auto spec = small_spec(0.5, static_cast<std::uint64_t>(100 + k));
    auto inst = make_quadratic(spec);
    Vec x(inst.d1());
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = nd(eng);
    worst = std::max(worst, rel_err(fd_hypergradient(inst, x, 1e-5), closed_form_hypergradient(inst, x)));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("hetero = 0: every client's hypergradient equals the aggregate one") {
  auto inst = make_quadratic(small_spec(0.0, 8));
  const Vec x = Vec::LinSpaced(inst.d1(), -1, 1);
  const Vec agg = closed_form_hypergradient(inst, x);
  for (const auto& cl : inst.clients()) CHECK((client_hypergradient(cl.mean, inst.rho_x(), x) - agg).norm() < 1e-10);
}

TEST_CASE("partition: iid even split and determinism") {
  std::vector<int> labels(100, 0);
  const auto p = partition(labels, {}, 4, 3);
  REQUIRE(p.size() == 4);
  for (const auto& l : p) CHECK(l.size() == 25);
  CHECK(is_set_partition(p, 100));
  CHECK(p == partition(labels, {}, 4, 3));
  CHECK(p != partition(labels, {}, 4, 4));
}

TEST_CASE("partition: label skew") {
  const Dataset d = make_gaussian_mixture(80, 3, 2, 2.0, 1);
  PartitionSpec one{PartitionMode::kLabelSkew, 1, 0};
  const auto p = partition(d.labels, one, 2, 5);
  CHECK(is_set_partition(p, 80));
  for (const auto& l : p) {
    std::set<int> classes;
    for (int k : l) classes.insert(d.labels[static_cast<std::size_t>(k)]);
    CHECK(classes.size() == 1);
  }

  PartitionSpec two{PartitionMode::kLabelSkew, 2, 8};
  const auto q = partition(d.labels, two, 4, 5);
  CHECK(is_set_partition(q, 80));
  for (const auto& l : q) CHECK(l.size() == 20);  // 2 shards of 10

  PartitionSpec too_many{PartitionMode::kLabelSkew, 3, 8};
  CHECK_THROWS_AS(partition(d.labels, too_many, 4, 5), ParameterError);
  CHECK_THROWS_AS(partition(d.labels, {}, 81, 5), ParameterError);
}

TEST_CASE("partition lists are always a set partition") {
  for (int m = 1; m <= 7; ++m) {
    const Dataset d = make_gaussian_mixture(53, 2, 3, 1.0, static_cast<std::uint64_t>(m));
    CHECK(is_set_partition(partition(d.labels, {}, m, 9), 53));
    PartitionSpec ls{PartitionMode::kLabelSkew, 1, 0};
    CHECK(is_set_partition(partition(d.labels, ls, m, 9), 53));
  }
}

TEST_CASE("make_hyperrep: iid split of 400 points, 100 per client") {
  HyperRepSpec spec;
  spec.m = 4;
  spec.n_points = 400;
  auto pb = make_hyperrep(spec, 2);
  for (int i = 0; i < 4; ++i) CHECK(pb->train_indices(i).size() + pb->val_indices(i).size() == 100);
  CHECK(pb->constants().mu == spec.ridge);
  HyperRepSpec bad = spec;
  bad.ridge = 0.0;
  CHECK_THROWS_AS(make_hyperrep(bad, 2), ParameterError);
}

TEST_CASE("make_hyperrep: label skew with one shard per client, two classes") {
  HyperRepSpec spec;
  spec.classes = 2;
  spec.m = 2;
  spec.partition = {PartitionMode::kLabelSkew, 1, 0};
  auto pb = make_hyperrep(spec, 4);
  for (int i = 0; i < 2; ++i) {
    std::set<int> seen;
    for (int k : pb->train_indices(i)) seen.insert(pb->data().labels[static_cast<std::size_t>(k)]);
    for (int k : pb->val_indices(i)) seen.insert(pb->data().labels[static_cast<std::size_t>(k)]);
    CHECK(seen.size() == 1);
  }
}

TEST_CASE("hyper-representation oracles agree with finite differences") {
  HyperRepSpec spec;
  spec.n_points = 120;
  spec.test_points = 20;
  auto pb = make_hyperrep(spec, 6);
  Point p = pb->initial_point();
  p.y = Vec::LinSpaced(pb->dim_y(), -0.4, 0.4);
  const Vec v = Vec::LinSpaced(pb->dim_y(), 1.0, -0.5);
  for (int i = 0; i < pb->num_clients(); ++i) {
    CHECK(rel_err(pb->hvp_lower_yy(i, p, v, Batch::exact()), fd_lower_hvp(*pb, i, p, v)) < 1e-6);
    CHECK(rel_err(pb->jvp_lower_xy(i, p, v, Batch::exact()), fd_lower_jvp(*pb, i, p, v)) < 1e-6);
  }
  // ridge makes the head strongly convex: v'Hv >= ridge |v|^2
  const Mat H = dense_lower_hessian(*pb, p);
  CHECK(sym_eigenvalues(0.5 * (H + H.transpose())).minCoeff() >= spec.ridge - 1e-9);
}

TEST_CASE("instance JSON round trip is exact") {
  auto spec = small_spec(0.5, 12);
  spec.noise.batch = 3;
  const auto inst = make_quadratic(spec);
  const auto back = instance_from_json(Json::parse(instance_to_json(inst).dump()));
  CHECK(instance_to_json(back).dump() == instance_to_json(inst).dump());
  CHECK(back.A_bar() == inst.A_bar());
  CHECK(back.constants().L_g == inst.constants().L_g);
}

}  // TEST_SUITE
