// SPDX-License-Identifier: Apache-2.0
#include "fbo/hypergrad.hpp"

#include <algorithm>
#include <sstream>
#include <string>

#include "fbo/errors.hpp"
#include "fbo/quadratic.hpp"

namespace fbo {

namespace {

constexpr double kCapSlack = 1.0 + 1e-12;

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

void check_participants(const BilevelProblem& pb, const std::vector<ClientId>& participants) {
  if (participants.empty()) throw ProtocolError("estimator called with no participants");
  for (ClientId i : participants) pb.check_client(i);
}

}  // namespace

void check_lambda(double lambda, const ProblemConstants& c) {
  if (!(lambda > 0.0)) throw ParameterError("lambda", "must be positive");
  const double cap = std::min(10.0, 1.0 / c.L_g);
  if (lambda > cap * kCapSlack) {
    throw ParameterError("lambda", num(lambda) + " exceeds min{10, 1/L_g} = " + num(cap));
  }
}

void check_beta(double beta, double lambda, const ProblemConstants& c) {
  if (!(beta > 0.0)) throw ParameterError("beta", "must be positive");
  if (beta > kCapSlack) throw ParameterError("beta", num(beta) + " exceeds the cap 1");
  if (beta > lambda * kCapSlack) throw ParameterError("beta", num(beta) + " exceeds lambda = " + num(lambda));
  const double cap = 1.0 / (6.0 * c.L_g);
  if (beta > cap * kCapSlack) throw ParameterError("beta", num(beta) + " exceeds 1/(6 L_g) = " + num(cap));
}

AggItdResult aggitd(const BilevelProblem& pb, const Vec& x, const Vec& y, const AggItdConfig& cfg,
                    const std::vector<ClientId>& participants, const StreamFactory& streams, CommLedger& ledger,
                    std::optional<int> force_Q) {
  const int N = cfg.N;
  if (N < 0) throw ParameterError("N", "must be nonnegative");
  check_lambda(cfg.lambda, pb.constants());
  check_beta(cfg.lower.beta, cfg.lambda, pb.constants());
  cfg.lower.validate(pb.num_clients());
  check_participants(pb, participants);
  pb.check_point({x, y});

  int Q = 0;
  if (force_Q) {
    if (*force_Q < 0 || *force_Q > N) throw ParameterError("Q", "must lie in {0..N}");
    Q = *force_Q;
  } else {
    Q = static_cast<int>(streams(-1, Purpose::kIndexDraw, 0).generator().index(static_cast<std::size_t>(N) + 1));
  }

  ledger.begin_loop();
  std::vector<Vec> ys{y};
  Vec z;
  for (int t = 0; t <= N; ++t) {
    const auto tt = static_cast<std::uint64_t>(t);
    const Point pt{x, ys.back()};
    const bool lower_step = t < N;
    std::vector<std::vector<Vec>> channels;
    if (lower_step) channels.push_back(local_lower_gradients(pb, pt, participants, streams, tt));
    if (t == Q) {
      std::vector<Vec> r;
      for (ClientId i : participants) r.push_back(pb.grad_upper_y(i, pt, Batch(streams(i, Purpose::kUpperGradY, tt))));
      channels.push_back(std::move(r));
    } else if (t > Q) {
      std::vector<Vec> zs;
      for (ClientId i : participants) {
        zs.push_back(z - cfg.lambda * pb.hvp_lower_yy(i, pt, z, Batch(streams(i, Purpose::kLowerHvp, tt))));
      }
      channels.push_back(std::move(zs));
    }
    const std::vector<Vec> means = aggregate_round(channels, ledger);
    if (t >= Q) z = means.back();
    if (lower_step) ys.push_back(one_round_lower(pb, x, ys.back(), means.front(), cfg.lower, participants, streams, tt, ledger));
  }

  AggItdResult out;
  const Point pN{x, ys.back()};
  const Vec p = cfg.lambda * static_cast<double>(N + 1) * z;
  std::vector<Vec> direct;
  std::vector<Vec> indirect;
  std::vector<Vec> hs;
  for (ClientId i : participants) {
    direct.push_back(pb.grad_upper_x(i, pN, Batch(streams(i, Purpose::kUpperGradX, 0))));
    indirect.push_back(pb.jvp_lower_xy(i, pN, p, Batch(streams(i, Purpose::kLowerJvp, 0))));
    hs.push_back(direct.back() - indirect.back());
  }
  out.h = aggregate_mean(hs, ledger);
  out.y_N = ys.back();
  out.trace.Q = Q;
  out.trace.y_iterates = std::move(ys);
  out.trace.z_final = z;
  out.trace.p = p;
  out.trace.h_direct = mean_of(direct);
  out.trace.h_indirect = mean_of(indirect);
  out.trace.participants = participants;
  out.trace.client_indirect = std::move(indirect);
  return out;
}

Vec expected_aggitd_indirect(const BilevelProblem& pb, const Vec& x, const std::vector<Vec>& y_iterates,
                             double lambda, int N) {
  if (N < 0) throw ParameterError("N", "must be nonnegative");
  if (y_iterates.size() != static_cast<std::size_t>(N) + 1) {
    throw ContractError("expected N+1 iterates, got " + std::to_string(y_iterates.size()));
  }
  auto at = [&](int t) { return Point{x, y_iterates[static_cast<std::size_t>(t)]}; };
  Vec sum = Vec::Zero(pb.dim_y());
  for (int Q = 0; Q <= N; ++Q) {
    Vec v = mean_grad_upper_y(pb, at(Q));
    for (int t = Q + 1; t <= N; ++t) v = v - lambda * mean_hvp_lower_yy(pb, at(t), v);
    sum += v;
  }
  return mean_jvp_lower_xy(pb, at(N), lambda * sum);
}

AidResult aid_fhe(const BilevelProblem& pb, const Vec& x, const Vec& y_N, const AidConfig& cfg,
                  const std::vector<ClientId>& participants, const StreamFactory& streams, CommLedger& ledger,
                  std::optional<int> force_T_prime) {
  const int T = cfg.T;
  if (T < 1) throw ParameterError("T", "must be at least 1");
  check_lambda(cfg.lambda, pb.constants());
  check_participants(pb, participants);
  const Point pN{x, y_N};
  pb.check_point(pN);

  int Tp = 0;
  if (force_T_prime) {
    if (*force_T_prime < 0 || *force_T_prime >= T) throw ParameterError("T_prime", "must lie in {0..T-1}");
    Tp = *force_T_prime;
  } else {
    Tp = static_cast<int>(streams(-1, Purpose::kIndexDraw, 1).generator().index(static_cast<std::size_t>(T)));
  }

  ledger.begin_loop();
  std::vector<Vec> seeds;
  for (ClientId i : participants) {
    seeds.push_back(cfg.lambda * T * pb.grad_upper_y(i, pN, Batch(streams(i, Purpose::kNeumannSeed, 0))));
  }
  Vec pt = aggregate_mean(seeds, ledger);
  Vec kept = pt;
  for (int t = 1; t <= T; ++t) {
    const auto tt = static_cast<std::uint64_t>(t);
    const std::vector<ClientId> S =
        cfg.resample_hessiv
            ? select_participants(cfg.participation, pb.num_clients(), streams(-1, Purpose::kParticipants, tt))
            : participants;
    std::vector<Vec> ps;
    for (ClientId i : S) {
      ps.push_back(pt - cfg.lambda * pb.hvp_lower_yy(i, pN, pt, Batch(streams(i, Purpose::kNeumannHvp, tt))));
    }
    pt = aggregate_mean(ps, ledger);
    if (t == Tp) kept = pt;
  }

  std::vector<Vec> hs;
  for (ClientId i : participants) {
    hs.push_back(pb.grad_upper_x(i, pN, Batch(streams(i, Purpose::kUpperGradX, 0))) -
                 pb.jvp_lower_xy(i, pN, kept, Batch::exact()));
  }
  return {aggregate_mean(hs, ledger), kept, Tp};
}

Vec local_fhe(const BilevelProblem& pb, const Vec& x, const Vec& y_N, const AidConfig& cfg,
              const std::vector<ClientId>& participants, const StreamFactory& streams, CommLedger& ledger,
              std::optional<int> force_T_prime) {
  const int T = cfg.T;
  if (T < 1) throw ParameterError("T", "must be at least 1");
  check_lambda(cfg.lambda, pb.constants());
  check_participants(pb, participants);
  if (force_T_prime && (*force_T_prime < 0 || *force_T_prime >= T)) {
    throw ParameterError("T_prime", "must lie in {0..T-1}");
  }
  const Point pN{x, y_N};
  pb.check_point(pN);

  std::vector<Vec> hs;
  for (ClientId i : participants) {
    const int Ti = force_T_prime ? *force_T_prime
                                 : static_cast<int>(streams(i, Purpose::kIndexDraw, 2).generator().index(
                                       static_cast<std::size_t>(T)));
    Vec p = cfg.lambda * T * pb.grad_upper_y(i, pN, Batch(streams(i, Purpose::kNeumannSeed, 0)));
    for (int t = 1; t <= Ti; ++t) {
      p = p - cfg.lambda * pb.hvp_lower_yy(i, pN, p, Batch(streams(i, Purpose::kNeumannHvp, static_cast<std::uint64_t>(t))));
    }
    hs.push_back(pb.grad_upper_x(i, pN, Batch(streams(i, Purpose::kUpperGradX, 0))) -
                 pb.jvp_lower_xy(i, pN, p, Batch::exact()));
  }
  return aggregate_mean(hs, ledger);
}

Vec dense_hessiv(const QuadraticInstance& inst, const Vec& x, const Vec& y, const Vec& v) {
  if (x.size() != inst.d1() || y.size() != inst.d2() || v.size() != inst.d2()) {
    throw ContractError("dense_hessiv: dimension mismatch");
  }
  return inst.solve_A_bar(v);
}

Vec dense_hessiv(const BilevelProblem& pb, const Vec& x, const Vec& y, const Vec& v) {
  const QuadraticInstance* inst = as_quadratic(pb);
  if (inst == nullptr) throw UnsupportedError("dense_hessiv needs a quadratic instance, got " + pb.kind());
  return dense_hessiv(*inst, x, y, v);
}

}  // namespace fbo
