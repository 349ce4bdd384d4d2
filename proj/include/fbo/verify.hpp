// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>

#include "fbo/problem.hpp"
#include "fbo/quadratic.hpp"

namespace fbo {

/// Ball of radius `radius` around `center` in the joint (x, y) space.
struct TestRegion {
  Point center;
  double radius = 1.0;
};

/// Ball around (0, y*(0)).
TestRegion default_region(const QuadraticInstance& inst, double radius = 1.0);

/// Central differences of x -> f(x, y*(x)), coordinate by coordinate.
Vec fd_hypergradient(const QuadraticInstance& inst, const Vec& x, double step = 1e-5);

/// Central differences of the noise-off lower gradient of client i along v
/// in y (Hessian product) and, contracted with v, in x (mixed product).
Vec fd_lower_hvp(const BilevelProblem& pb, ClientId i, const Point& p, const Vec& v, double step = 1e-5);
Vec fd_lower_jvp(const BilevelProblem& pb, ClientId i, const Point& p, const Vec& v, double step = 1e-5);

/// lambda sum_{j<terms} (I - lambda A_bar)^j v.
Vec neumann_hessiv(const QuadraticInstance& inst, const Vec& v, double lambda, int terms);

struct MeasuredConstants {
  ProblemConstants constants;  // sigma_g^2 = max(sigma_1^2, sigma_2^2)
  double sigma_1 = 0.0;        // lower gradient noise
  double sigma_2 = 0.0;        // lower client dissimilarity
};

/// Empirical constants of a quadratic instance.
///   mu, L_g: extreme eigenvalues over A_bar, every A_i and every sample
///     (L_g also covers the coupling norms); exact.
///   L_f = max(rho_x, 1), rho = 0; exact.
///   M: max |grad F| over `samples` uniform points of the region and every
///     sample objective.
///   sigma_f, sigma_1: root mean square deviation of the stochastic
///     gradients from the client gradient, maximized over clients.
///   sigma_2: root of max over region points of mean_i |grad_y g_i - grad_y g|^2.
/// Requires samples >= 100.
MeasuredConstants measure_constants(const QuadraticInstance& inst, const TestRegion& region, int samples,
                                    std::uint64_t seed = 0);

struct McEstimate {
  Vec mean;
  double bias_norm = 0.0;    // |mean - truth|
  double bias_se = 0.0;      // sqrt(sum_j var_j / n): norm of the standard error of the mean
  double variance = 0.0;     // mean |h - mean|^2
  double variance_se = 0.0;  // standard error of `variance`
  int trials = 0;
};

/// Monte-Carlo mean, bias and spread of `estimate(trial)` against `truth`.
/// Requires trials >= 1000.
McEstimate estimator_bias_mc(const std::function<Vec(int)>& estimate, const Vec& truth, int trials);
/// Same with truth = closed_form_hypergradient(inst, x).
McEstimate estimator_bias_mc(const std::function<Vec(int)>& estimate, const QuadraticInstance& inst, const Vec& x,
                             int trials);

/// Upper bound on the squared bias of the AggITD indirect part given the
/// initial gap E|y - y*|^2.
double aggitd_bias_bound(const ProblemConstants& c, double lambda, double beta, int N, double init_gap);
/// sigma_h^2 = lambda (N+1) L_g^2 M^2 / mu.
double aggitd_variance_bound(const ProblemConstants& c, double lambda, int N);

/// Newton's method on the noise-off aggregate lower objective, with
/// backtracking. Works for any problem.
Vec reference_lower_opt(const BilevelProblem& pb, const Vec& x, Vec y_init, double tol = 1e-11, int max_iter = 100);
/// grad_x f - J H^{-1} grad_y f at (x, y_star) from dense aggregates.
Vec reference_hypergradient(const BilevelProblem& pb, const Vec& x, const Vec& y_star);

/// Runs the cross-checks between independent routes on a fixed set of
/// instances, printing one line per check. Returns true when all pass.
bool run_verification_suite(std::ostream& out, std::uint64_t seed = 0);

}  // namespace fbo
