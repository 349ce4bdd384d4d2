// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fbo/hypergrad.hpp"
#include "fbo/lower_solver.hpp"
#include "fbo/problem.hpp"
#include "fbo/runtime.hpp"

namespace fbo {

enum class EstimatorKind { kAggItd, kAid, kLocal };

std::string to_string(EstimatorKind e);
/// "aggitd", "aid" (alias "fednest") or "local"; throws ParameterError otherwise.
EstimatorKind parse_estimator(const std::string& s);

struct RunConfig {
  std::shared_ptr<const BilevelProblem> problem;
  EstimatorKind estimator = EstimatorKind::kAggItd;
  int K = 100;
  int N = 5;
  int T = 5;  // HessIV budget of the aid / local estimators
  double lambda = 0.1;
  double alpha = 0.01;
  double beta = 0.01;
  std::vector<int> tau{1};
  LowerVariant variant = LowerVariant::kSvrg;
  Participation participation;
  bool resample_hessiv = false;
  std::uint64_t seed = 0;
  int eval_every = 1;
  std::optional<Vec> x0;  // default: problem->initial_point()
  std::optional<Vec> y0;

  /// Checks every field against the problem; throws ParameterError.
  void validate() const;
  LowerStepConfig lower() const { return {beta, tau, variant}; }
};

/// Metrics of the state (x_k, y_k) at the start of outer iteration k.
/// `est_err` is |h - grad f| for the estimate computed at x_{k-1} (0 on the
/// first row). grad_norm_sq, lower_gap and objective use noise-off oracles
/// on all clients.
struct MetricsRecord {
  int k = 0;
  std::int64_t rounds_cum = 0;
  double grad_norm_sq = 0.0;
  double lower_gap = 0.0;
  double est_err = 0.0;
  double objective = 0.0;
  double test_metric = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

struct RunReport {
  std::vector<MetricsRecord> rows;
  Vec x;
  Vec y;
  CommLedger ledger;
  std::vector<std::int64_t> rounds_per_outer;
  std::vector<std::int64_t> loops_per_outer;
  SampleAudit audit;
};

struct StepSizes {
  double lambda = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  int N = 0;
};

/// lambda = min{10, 1/L_g}, beta = min{1, lambda, 1/(6 L_g)},
/// alpha = alpha_bar / sqrt(K) with alpha_bar defaulting to 1/kappa_g^4,
/// N = ceil(kappa_g) unless given.
StepSizes default_stepsizes(const ProblemConstants& c, int K, std::optional<int> N = std::nullopt,
                            std::optional<double> alpha_bar = std::nullopt);

/// One-Round-Upper. Client i starts at x and takes tau_i steps of size
/// alpha / tau_i along h - grad_x F_i(x, y+; xi_v) + grad_x F_i(x_v, y+; xi_v),
/// one fresh sample per step from lane (i, kUpperLocal, 0, v). One round.
Vec one_round_upper(const BilevelProblem& pb, const Vec& x, const Vec& y_plus, const Vec& h, double alpha,
                    const std::vector<int>& tau, const std::vector<ClientId>& participants,
                    const StreamFactory& streams, CommLedger& ledger);

/// Noise-off ground truth at x: y*(x), grad f(x), f(x, y*(x)). Closed forms
/// for quadratics, Newton plus dense solves otherwise.
class Evaluator {
 public:
  explicit Evaluator(std::shared_ptr<const BilevelProblem> pb);
  Vec lower_opt(const Vec& x);
  Vec hypergradient(const Vec& x);
  double objective(const Vec& x);

 private:
  std::shared_ptr<const BilevelProblem> pb_;
  Vec y_guess_;
};

/// Runs K outer iterations with the configured estimator.
RunReport run(const RunConfig& cfg);
/// run() with the estimator forced to aggitd / aid / local.
RunReport run_fbo_aggitd(RunConfig cfg);
RunReport run_fednest_baseline(RunConfig cfg);
RunReport run_local_baseline(RunConfig cfg);

/// Divergence guard threshold on |x| and |y|.
inline constexpr double kDivergenceNorm = 1e8;

}  // namespace fbo
