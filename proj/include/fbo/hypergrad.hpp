// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "fbo/lower_solver.hpp"
#include "fbo/problem.hpp"
#include "fbo/runtime.hpp"

namespace fbo {

class QuadraticInstance;

struct AggItdConfig {
  double lambda = 0.1;
  int N = 5;
  LowerStepConfig lower;
};

struct AidConfig {
  double lambda = 0.1;
  int N = 5;
  int T = 5;
  LowerStepConfig lower;
  /// Draw a fresh participant subset for every HessIV round (only matters
  /// with partial participation).
  bool resample_hessiv = false;
  Participation participation;
};

/// Throws ParameterError unless lambda <= min{10, 1/L_g}.
void check_lambda(double lambda, const ProblemConstants& c);
/// Throws ParameterError unless beta <= min{1, lambda, 1/(6 L_g)}.
void check_beta(double beta, double lambda, const ProblemConstants& c);

struct EstimatorTrace {
  int Q = 0;
  std::vector<Vec> y_iterates;  // y^0 .. y^N
  Vec z_final;
  Vec p;
  Vec h_direct;    // participant mean of grad_x F_i
  Vec h_indirect;  // participant mean of the mixed-partial products
  std::vector<ClientId> participants;
  std::vector<Vec> client_indirect;  // per participant, same order
};

struct AggItdResult {
  Vec h;    // h_direct - h_indirect
  Vec y_N;  // warm start for the next outer iteration
  EstimatorTrace trace;
};

/// AggITD: the lower loop and the HessIV chain in one pass of N+1 rounds.
///
/// At step t every participant sends its lower gradient; at t = Q it also
/// sends r_i = grad_y F_i(x, y^Q), and for t > Q the chain product
/// z - lambda grad_yy G_i(x, y^t) z, so the server holds
///   z^N = prod_{t=N}^{Q+1} (I - lambda H^t) r^Q.
/// Then p = lambda (N+1) z^N and the participants send
///   grad_x F_i(x, y^N) - grad_x grad_y G_i(x, y^N) p.
/// Ledger: 2N+2 rounds. `force_Q` pins Q instead of drawing it.
AggItdResult aggitd(const BilevelProblem& pb, const Vec& x, const Vec& y, const AggItdConfig& cfg,
                    const std::vector<ClientId>& participants, const StreamFactory& streams, CommLedger& ledger,
                    std::optional<int> force_Q = std::nullopt);

/// lambda J(y^N) sum_{Q=0}^{N} prod_{t=N}^{Q+1} (I - lambda H(y^t)) grad_y f(x, y^Q)
/// with noise-off aggregates over all clients: the mean over Q of the
/// AggITD indirect part for a fixed trajectory.
Vec expected_aggitd_indirect(const BilevelProblem& pb, const Vec& x, const std::vector<Vec>& y_iterates,
                             double lambda, int N);

struct AidResult {
  Vec h;
  Vec p;  // p_{T'}
  int T_prime = 0;
};

/// AID-based estimate at a finished lower loop:
///   p_0 = lambda T mean_i grad_y F_i(x, y_N)            (1 round)
///   p_t = mean_i (I - lambda grad_yy G_i(x, y_N)) p_{t-1}, t = 1..T  (T rounds)
///   h   = mean_i [grad_x F_i(x, y_N) - grad_x grad_y G_i(x, y_N) p_{T'}]  (1 round)
/// T' is uniform on {0..T-1}. The full chain is always exchanged so the
/// cost per call is exactly T+2 rounds.
AidResult aid_fhe(const BilevelProblem& pb, const Vec& x, const Vec& y_N, const AidConfig& cfg,
                  const std::vector<ClientId>& participants, const StreamFactory& streams, CommLedger& ledger,
                  std::optional<int> force_T_prime = std::nullopt);

/// Fully local estimate: every client runs the chain on its own Hessian and
/// upper gradient with its own T'_i; only the final vectors are averaged
/// (1 round). `force_T_prime` pins every T'_i.
Vec local_fhe(const BilevelProblem& pb, const Vec& x, const Vec& y_N, const AidConfig& cfg,
              const std::vector<ClientId>& participants, const StreamFactory& streams, CommLedger& ledger,
              std::optional<int> force_T_prime = std::nullopt);

/// Solves A_bar w = v by Cholesky.
Vec dense_hessiv(const QuadraticInstance& inst, const Vec& x, const Vec& y, const Vec& v);
/// Quadratic problems only; throws UnsupportedError otherwise.
Vec dense_hessiv(const BilevelProblem& pb, const Vec& x, const Vec& y, const Vec& v);

}  // namespace fbo
