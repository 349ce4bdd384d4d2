// SPDX-License-Identifier: Apache-2.0
#include "fbo/lower_solver.hpp"

#include <string>

#include "fbo/errors.hpp"
#include "fbo/quadratic.hpp"

namespace fbo {

void LowerStepConfig::validate(int m) const {
  if (!(beta > 0.0)) throw ParameterError("beta", "must be positive");
  if (tau.size() != 1 && tau.size() != static_cast<std::size_t>(m)) {
    throw ParameterError("tau", "expected 1 or " + std::to_string(m) + " entries, got " + std::to_string(tau.size()));
  }
  for (int t : tau) {
    if (t < 1) throw ParameterError("tau", "local step counts must be at least 1");
  }
}

std::vector<Vec> local_lower_gradients(const BilevelProblem& pb, const Point& p,
                                       const std::vector<ClientId>& participants, const StreamFactory& streams,
                                       std::uint64_t t) {
  std::vector<Vec> out;
  out.reserve(participants.size());
  for (ClientId i : participants) out.push_back(pb.grad_lower_y(i, p, Batch(streams(i, Purpose::kLowerGrad, t))));
  return out;
}

Vec one_round_lower(const BilevelProblem& pb, const Vec& x, const Vec& y, const Vec& q, const LowerStepConfig& cfg,
                    const std::vector<ClientId>& participants, const StreamFactory& streams, std::uint64_t t,
                    CommLedger& ledger) {
  cfg.validate(pb.num_clients());
  const Point anchor{x, y};
  std::vector<Vec> finals;
  finals.reserve(participants.size());
  for (ClientId i : participants) {
    const int tau = cfg.tau_of(i);
    const double step = cfg.beta / tau;
    Point local{x, y};
    for (int v = 0; v < tau; ++v) {
      const Batch b(streams(i, Purpose::kLowerLocal, t, static_cast<std::uint64_t>(v)));
      Vec dir = pb.grad_lower_y(i, local, b);
      if (cfg.variant == LowerVariant::kSvrg) dir = (dir - pb.grad_lower_y(i, anchor, b)) + q;
      local.y -= step * dir;
    }
    finals.push_back(std::move(local.y));
  }
  return aggregate_mean(finals, ledger);
}

std::vector<Vec> run_lower_loop(const BilevelProblem& pb, const Vec& x, const Vec& y0, int N,
                                const LowerStepConfig& cfg, const std::vector<ClientId>& participants,
                                const StreamFactory& streams, CommLedger& ledger) {
  if (N < 0) throw ParameterError("N", "must be nonnegative");
  std::vector<Vec> ys{y0};
  for (int t = 0; t < N; ++t) {
    const Point p{x, ys.back()};
    const auto tt = static_cast<std::uint64_t>(t);
    const Vec q = aggregate_mean(local_lower_gradients(pb, p, participants, streams, tt), ledger);
    ys.push_back(one_round_lower(pb, x, ys.back(), q, cfg, participants, streams, tt, ledger));
  }
  return ys;
}

double lower_gap(const BilevelProblem& pb, const Vec& x, const Vec& y) {
  const QuadraticInstance* inst = as_quadratic(pb);
  if (inst == nullptr) throw UnsupportedError("lower_gap needs a quadratic instance, got " + pb.kind());
  pb.check_point({x, y});
  return (y - closed_form_lower_opt(*inst, x)).squaredNorm();
}

}  // namespace fbo
