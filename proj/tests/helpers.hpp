// SPDX-License-Identifier: Apache-2.0
// Small fixtures shared by the unit tests.
#pragma once

#include <memory>
#include <vector>

#include "fbo/problem.hpp"
#include "fbo/quadratic.hpp"

namespace fbo::testing {

inline Mat mat(std::initializer_list<std::initializer_list<double>> rows) {
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

inline Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) v(k++) = x;
  return v;
}

inline QuadraticClient client_of(const QuadraticSample& s) { return {s, {s}}; }

/// One client, one sample.
inline QuadraticInstance single(const QuadraticSample& s, double rho_x = 1.0) {
  return QuadraticInstance(static_cast<int>(s.B.cols()), static_cast<int>(s.A.rows()), rho_x, {client_of(s)});
}

inline std::shared_ptr<QuadraticProblem> problem_of(QuadraticInstance inst) {
  return std::make_shared<QuadraticProblem>(std::move(inst));
}

inline QuadraticSpec small_spec(double hetero, std::uint64_t seed = 3) {
  QuadraticSpec s;
  s.d1 = 4;
  s.d2 = 5;
  s.m = 4;
  s.n_per_client = 6;
  s.mu = 1.0;
  s.L_g = 5.0;
  s.hetero = hetero;
  s.spread = 0.3;
  s.seed = seed;
  return s;
}

inline double rel_err(const Vec& a, const Vec& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

inline std::vector<ClientId> all_clients(int m) {
  std::vector<ClientId> v(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

}  // namespace fbo::testing
