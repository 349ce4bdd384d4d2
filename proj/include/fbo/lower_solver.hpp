// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fbo/problem.hpp"
#include "fbo/rng.hpp"
#include "fbo/runtime.hpp"

namespace fbo {

enum class LowerVariant { kSvrg, kSgd };

struct LowerStepConfig {
  double beta = 0.01;
  std::vector<int> tau{1};  // one entry for all clients, or one per client
  LowerVariant variant = LowerVariant::kSvrg;

  int tau_of(ClientId i) const { return tau.size() == 1 ? tau.front() : tau.at(static_cast<std::size_t>(i)); }
  /// Throws ParameterError on beta <= 0, tau_i < 1 or a tau list of the wrong length.
  void validate(int m) const;
};

/// q^t_i = grad_y G_i(x, y; zeta_{i,t}) for every participant, lane (i, kLowerGrad, t).
std::vector<Vec> local_lower_gradients(const BilevelProblem& pb, const Point& p,
                                       const std::vector<ClientId>& participants, const StreamFactory& streams,
                                       std::uint64_t t);

/// One-Round-Lower. Client i starts at y and takes tau_i steps of size
/// beta / tau_i along
///   svrg: grad G_i(x, y_v; zeta_v) - grad G_i(x, y; zeta_v) + q
///   sgd:  grad G_i(x, y_v; zeta_v)
/// with zeta_v drawn from lane (i, kLowerLocal, t, v). The participant mean
/// of the last local iterates is aggregated in one round.
Vec one_round_lower(const BilevelProblem& pb, const Vec& x, const Vec& y, const Vec& q, const LowerStepConfig& cfg,
                    const std::vector<ClientId>& participants, const StreamFactory& streams, std::uint64_t t,
                    CommLedger& ledger);

/// N lower steps, each a gradient round followed by One-Round-Lower
/// (2N rounds). Returns y^0 .. y^N.
std::vector<Vec> run_lower_loop(const BilevelProblem& pb, const Vec& x, const Vec& y0, int N,
                                const LowerStepConfig& cfg, const std::vector<ClientId>& participants,
                                const StreamFactory& streams, CommLedger& ledger);

/// |y - y*(x)|^2 from the closed form. Quadratic problems only.
double lower_gap(const BilevelProblem& pb, const Vec& x, const Vec& y);

}  // namespace fbo
