// SPDX-License-Identifier: Apache-2.0
#include "fbo/driver.hpp"

#include <cmath>
#include <sstream>

#include "fbo/errors.hpp"
#include "fbo/quadratic.hpp"
#include "fbo/verify.hpp"

namespace fbo {

std::string to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::kAggItd: return "aggitd";
    case EstimatorKind::kAid: return "aid";
    case EstimatorKind::kLocal: return "local";
  }
  return "?";
}

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "aggitd") return EstimatorKind::kAggItd;
  if (s == "aid" || s == "fednest") return EstimatorKind::kAid;
  if (s == "local") return EstimatorKind::kLocal;
  throw ParameterError("estimator", "unknown estimator '" + s + "' (aggitd, aid, local)");
}

void RunConfig::validate() const {
  if (!problem) throw ParameterError("problem", "missing");
  if (K < 0) throw ParameterError("K", "must be nonnegative");
  if (N < 0) throw ParameterError("N", "must be nonnegative");
  if (T < 1) throw ParameterError("T", "must be at least 1");
  if (eval_every < 1) throw ParameterError("eval_every", "must be at least 1");
  if (!(alpha > 0.0)) throw ParameterError("alpha", "must be positive");
  check_lambda(lambda, problem->constants());
  check_beta(beta, lambda, problem->constants());
  lower().validate(problem->num_clients());
  participant_count(participation, problem->num_clients());
  if (x0 && x0->size() != problem->dim_x()) throw ParameterError("x0", "wrong dimension");
  if (y0 && y0->size() != problem->dim_y()) throw ParameterError("y0", "wrong dimension");
}

StepSizes default_stepsizes(const ProblemConstants& c, int K, std::optional<int> N, std::optional<double> alpha_bar) {
  StepSizes s;
  s.lambda = std::min(10.0, 1.0 / c.L_g);
  s.beta = std::min({1.0, s.lambda, 1.0 / (6.0 * c.L_g)});
  const double abar = alpha_bar ? *alpha_bar : 1.0 / std::pow(c.kappa_g, 4);
  s.alpha = abar / std::sqrt(static_cast<double>(std::max(K, 1)));
  s.N = N ? *N : static_cast<int>(std::ceil(c.kappa_g));
  return s;
}

Vec one_round_upper(const BilevelProblem& pb, const Vec& x, const Vec& y_plus, const Vec& h, double alpha,
                    const std::vector<int>& tau, const std::vector<ClientId>& participants,
                    const StreamFactory& streams, CommLedger& ledger) {
  if (!(alpha > 0.0)) throw ParameterError("alpha", "must be positive");
  if (tau.size() != 1 && tau.size() != static_cast<std::size_t>(pb.num_clients())) {
    throw ParameterError("tau", "expected 1 or m entries");
  }
  if (h.size() != pb.dim_x()) throw ContractError("h has the wrong dimension");
  const Point anchor{x, y_plus};
  pb.check_point(anchor);
  std::vector<Vec> finals;
  for (ClientId i : participants) {
    const int ti = tau.size() == 1 ? tau.front() : tau.at(static_cast<std::size_t>(i));
    if (ti < 1) throw ParameterError("tau", "local step counts must be at least 1");
    const double step = alpha / ti;
    Point local{x, y_plus};
    for (int v = 0; v < ti; ++v) {
      const Batch b(streams(i, Purpose::kUpperLocal, 0, static_cast<std::uint64_t>(v)));
      const Vec dir = (pb.grad_upper_x(i, local, b) - pb.grad_upper_x(i, anchor, b)) + h;
      local.x -= step * dir;
    }
    finals.push_back(std::move(local.x));
  }
  return aggregate_mean(finals, ledger);
}

Evaluator::Evaluator(std::shared_ptr<const BilevelProblem> pb) : pb_(std::move(pb)) {
  y_guess_ = pb_->initial_point().y;
}

Vec Evaluator::lower_opt(const Vec& x) {
  if (const QuadraticInstance* q = as_quadratic(*pb_)) return closed_form_lower_opt(*q, x);
  y_guess_ = reference_lower_opt(*pb_, x, y_guess_);
  return y_guess_;
}

Vec Evaluator::hypergradient(const Vec& x) {
  if (const QuadraticInstance* q = as_quadratic(*pb_)) return closed_form_hypergradient(*q, x);
  return reference_hypergradient(*pb_, x, lower_opt(x));
}

double Evaluator::objective(const Vec& x) { return mean_upper_value(*pb_, {x, lower_opt(x)}); }

namespace {

void guard(const Vec& v, const char* name, int k) {
  if (!v.allFinite() || v.norm() > kDivergenceNorm) {
    std::ostringstream os;
    os << "diverged at outer iteration " << k << ": |" << name << "| = " << v.norm();
    throw DivergenceError(os.str());
  }
}

MetricsRecord evaluate(Evaluator& ev, const BilevelProblem& pb, int k, std::int64_t rounds, const Vec& x,
                       const Vec& y, double est_err) {
  MetricsRecord r;
  r.k = k;
  r.rounds_cum = rounds;
  const Vec ystar = ev.lower_opt(x);
  r.grad_norm_sq = ev.hypergradient(x).squaredNorm();
  r.lower_gap = (y - ystar).squaredNorm();
  r.est_err = est_err;
  r.objective = mean_upper_value(pb, {x, ystar});
  r.test_metric = pb.task_metric({x, y});
  return r;
}

}  // namespace

RunReport run(const RunConfig& cfg) {
  cfg.validate();
  const BilevelProblem& pb = *cfg.problem;
  const Point start = pb.initial_point();
  Vec x = cfg.x0 ? *cfg.x0 : start.x;
  Vec y = cfg.y0 ? *cfg.y0 : start.y;
  const LowerStepConfig lower = cfg.lower();

  RunReport rep;
  Evaluator ev(cfg.problem);
  rep.rows.push_back(evaluate(ev, pb, 0, 0, x, y, 0.0));

  for (int k = 0; k < cfg.K; ++k) {
    rep.ledger.begin_outer();
    const StreamFactory streams(cfg.seed, static_cast<std::uint64_t>(k), &rep.audit);
    const auto participants =
        select_participants(cfg.participation, pb.num_clients(), streams(-1, Purpose::kParticipants, 0));

    Vec h;
    Vec y_plus;
    switch (cfg.estimator) {
      case EstimatorKind::kAggItd: {
        AggItdResult r = aggitd(pb, x, y, {cfg.lambda, cfg.N, lower}, participants, streams, rep.ledger);
        h = std::move(r.h);
        y_plus = std::move(r.y_N);
        break;
      }
      case EstimatorKind::kAid:
      case EstimatorKind::kLocal: {
        rep.ledger.begin_loop();
        y_plus = run_lower_loop(pb, x, y, cfg.N, lower, participants, streams, rep.ledger).back();
        const AidConfig aid{cfg.lambda, cfg.N, cfg.T, lower, cfg.resample_hessiv, cfg.participation};
        h = cfg.estimator == EstimatorKind::kAid ? aid_fhe(pb, x, y_plus, aid, participants, streams, rep.ledger).h
                                                 : local_fhe(pb, x, y_plus, aid, participants, streams, rep.ledger);
        break;
      }
    }

    const bool record = (k + 1) % cfg.eval_every == 0 || k + 1 == cfg.K;
    const double err = record ? (h - ev.hypergradient(x)).norm() : 0.0;
    x = one_round_upper(pb, x, y_plus, h, cfg.alpha, cfg.tau, participants, streams, rep.ledger);
    y = std::move(y_plus);
    guard(x, "x", k);
    guard(y, "y", k);
    rep.rounds_per_outer.push_back(rep.ledger.rounds_this_outer);
    rep.loops_per_outer.push_back(rep.ledger.loops_this_outer);
    if (record) rep.rows.push_back(evaluate(ev, pb, k + 1, rep.ledger.rounds_total, x, y, err));
  }
  rep.x = std::move(x);
  rep.y = std::move(y);
  return rep;
}

RunReport run_fbo_aggitd(RunConfig cfg) {
  cfg.estimator = EstimatorKind::kAggItd;
  return run(cfg);
}

RunReport run_fednest_baseline(RunConfig cfg) {
  cfg.estimator = EstimatorKind::kAid;
  return run(cfg);
}

RunReport run_local_baseline(RunConfig cfg) {
  cfg.estimator = EstimatorKind::kLocal;
  return run(cfg);
}

}  // namespace fbo
