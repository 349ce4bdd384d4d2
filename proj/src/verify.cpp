// SPDX-License-Identifier: Apache-2.0
#include "fbo/verify.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>

#include "fbo/errors.hpp"
#include "fbo/hypergrad.hpp"
#include "fbo/hyperrep.hpp"

namespace fbo {

TestRegion default_region(const QuadraticInstance& inst, double radius) {
  if (!(radius > 0.0)) throw ParameterError("radius", "must be positive");
  return {{Vec::Zero(inst.d1()), closed_form_lower_opt(inst, Vec::Zero(inst.d1()))}, radius};
}

Vec fd_hypergradient(const QuadraticInstance& inst, const Vec& x, double step) {
  if (!(step > 0.0)) throw ParameterError("step", "must be positive");
  auto f = [&](const Vec& z) { return upper_objective(inst, z, closed_form_lower_opt(inst, z)); };
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x;
    Vec xm = x;
    xp(j) += step;
    xm(j) -= step;
    g(j) = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

Vec fd_lower_hvp(const BilevelProblem& pb, ClientId i, const Point& p, const Vec& v, double step) {
  const Point up{p.x, p.y + step * v};
  const Point dn{p.x, p.y - step * v};
  return (pb.grad_lower_y(i, up, Batch::exact()) - pb.grad_lower_y(i, dn, Batch::exact())) / (2.0 * step);
}

Vec fd_lower_jvp(const BilevelProblem& pb, ClientId i, const Point& p, const Vec& v, double step) {
  Vec out(p.x.size());
  for (Eigen::Index j = 0; j < p.x.size(); ++j) {
    Point up = p;
    Point dn = p;
    up.x(j) += step;
    dn.x(j) -= step;
    out(j) = v.dot(pb.grad_lower_y(i, up, Batch::exact()) - pb.grad_lower_y(i, dn, Batch::exact())) / (2.0 * step);
  }
  return out;
}

Vec neumann_hessiv(const QuadraticInstance& inst, const Vec& v, double lambda, int terms) {
  Vec term = v;
  Vec sum = Vec::Zero(v.size());
  for (int j = 0; j < terms; ++j) {
    sum += term;
    term = term - lambda * (inst.A_bar() * term);
  }
  return lambda * sum;
}

namespace {

Vec uniform_in_ball(Generator& g, const Vec& center, double radius) {
  const Vec dir = g.normal_vec(center.size()).normalized();
  const double r = radius * std::pow(g.uniform(), 1.0 / static_cast<double>(center.size()));
  return center + r * dir;
}

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace

MeasuredConstants measure_constants(const QuadraticInstance& inst, const TestRegion& region, int samples,
                                    std::uint64_t seed) {
  if (samples < 100) throw ParameterError("samples", "need at least 100");
  if (!(region.radius > 0.0)) throw ParameterError("radius", "must be positive");
  const int d1 = inst.d1();
  const int d2 = inst.d2();
  if (region.center.x.size() != d1 || region.center.y.size() != d2) {
    throw ContractError("region center has the wrong dimensions");
  }

  double mu = INFINITY;
  double L_g = 0.0;
  auto spectrum = [&](const Mat& A, const Mat& B) {
    const Vec ev = sym_eigenvalues(A);
    mu = std::min(mu, ev(0));
    L_g = std::max({L_g, ev(ev.size() - 1), spectral_norm(B)});
  };
  spectrum(inst.A_bar(), inst.B_bar());
  for (const QuadraticClient& cl : inst.clients()) {
    spectrum(cl.mean.A, cl.mean.B);
    for (const QuadraticSample& s : cl.samples) spectrum(s.A, s.B);
  }

  const QuadraticProblem pb(std::make_shared<const QuadraticInstance>(inst));
  const Vec center = concat(region.center.x, region.center.y);
  Generator g = RngStream(seed, Lane{-1, Purpose::kMeasure, 0, 0, 0}).generator();

  double M = 0.0;
  double s2 = 0.0;
  std::vector<double> v1(static_cast<std::size_t>(inst.m()), 0.0);
  std::vector<double> vf(static_cast<std::size_t>(inst.m()), 0.0);
  for (int k = 0; k < samples; ++k) {
    const Vec z = uniform_in_ball(g, center, region.radius);
    const Point p{z.head(d1), z.tail(d2)};
    const Vec gbar = mean_grad_lower_y(pb, p);
    double dis = 0.0;
    for (int i = 0; i < inst.m(); ++i) {
      for (const QuadraticSample& s : inst.client(i).samples) {
        const Vec gF = concat(inst.rho_x() * p.x + s.e, p.y - s.d);
        M = std::max(M, gF.norm());
      }
      const Vec gi = pb.grad_lower_y(i, p, Batch::exact());
      dis += (gi - gbar).squaredNorm();

      const RngStream st(seed, Lane{i, Purpose::kMeasure, 1, static_cast<std::uint64_t>(k), 0});
      const RngStream su(seed, Lane{i, Purpose::kMeasure, 2, static_cast<std::uint64_t>(k), 0});
      v1[static_cast<std::size_t>(i)] += (pb.grad_lower_y(i, p, Batch(st)) - gi).squaredNorm();
      const Vec fx = pb.grad_upper_x(i, p, Batch(su)) - pb.grad_upper_x(i, p, Batch::exact());
      const Vec fy = pb.grad_upper_y(i, p, Batch(su)) - pb.grad_upper_y(i, p, Batch::exact());
      vf[static_cast<std::size_t>(i)] += fx.squaredNorm() + fy.squaredNorm();
    }
    s2 = std::max(s2, dis / inst.m());
  }
  const double s1 = *std::max_element(v1.begin(), v1.end()) / samples;
  const double f1 = *std::max_element(vf.begin(), vf.end()) / samples;

  MeasuredConstants out;
  out.sigma_1 = std::sqrt(s1);
  out.sigma_2 = std::sqrt(s2);
  out.constants =
      ProblemConstants::make(mu, L_g, std::max(inst.rho_x(), 1.0), M, 0.0, std::sqrt(f1), std::sqrt(std::max(s1, s2)));
  return out;
}

McEstimate estimator_bias_mc(const std::function<Vec(int)>& estimate, const Vec& truth, int trials) {
  if (trials < 1000) throw ParameterError("trials", "need at least 1000");
  std::vector<Vec> hs;
  hs.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    hs.push_back(estimate(t));
    if (hs.back().size() != truth.size()) throw ContractError("estimate has the wrong dimension");
  }
  McEstimate out;
  out.trials = trials;
  out.mean = mean_of(hs);
  const double n = trials;
  Vec var = Vec::Zero(truth.size());
  std::vector<double> sq(hs.size());
  for (std::size_t t = 0; t < hs.size(); ++t) {
    const Vec d = hs[t] - out.mean;
    var += d.cwiseProduct(d);
    sq[t] = d.squaredNorm();
  }
  var /= n - 1.0;
  out.bias_norm = (out.mean - truth).norm();
  out.bias_se = std::sqrt(var.sum() / n);
  double mean_sq = 0.0;
  for (double s : sq) mean_sq += s;
  mean_sq /= n;
  double var_sq = 0.0;
  for (double s : sq) var_sq += (s - mean_sq) * (s - mean_sq);
  out.variance = mean_sq;
  out.variance_se = std::sqrt(var_sq / (n - 1.0) / n);
  return out;
}

McEstimate estimator_bias_mc(const std::function<Vec(int)>& estimate, const QuadraticInstance& inst, const Vec& x,
                             int trials) {
  return estimator_bias_mc(estimate, closed_form_hypergradient(inst, x), trials);
}

double aggitd_bias_bound(const ProblemConstants& c, double lambda, double beta, int N, double init_gap) {
  const double mu = c.mu;
  const double Lg2 = c.L_g * c.L_g;
  const double M2 = c.M * c.M;
  const double Lf2 = c.L_f * c.L_f;
  const double rho2 = c.rho * c.rho;
  const double sg2 = c.sigma_g * c.sigma_g;
  const double n = N;
  const double contraction = std::pow(1.0 - beta * mu / 2.0, n);
  const double mu3 = mu * mu * mu;
  const double a1 = 4.0 * (n + 1.0) * contraction * (rho2 / (lambda * mu3) + 4.0 * rho2 / (beta * mu3));
  const double a2 = n * (n + 1.0) * (1.0 + std::pow(1.0 - lambda * mu, 2)) / (lambda * mu3);
  const double a3 = 3.0 * (n + 1.0) * contraction / (lambda * mu);
  const double l2 = lambda * lambda;
  return (4.0 * l2 * Lg2 * M2 * a1 + 4.0 * l2 * Lf2 * Lg2 * a3) * init_gap +
         4.0 * Lg2 * M2 * std::pow(1.0 - lambda * mu, 2.0 * n + 2.0) / (mu * mu) +
         400.0 * l2 * beta * beta * Lg2 * M2 * sg2 * rho2 * a2 +
         200.0 * lambda * beta * beta * sg2 * Lf2 * Lg2 * n * (n + 1.0) / mu;
}

double aggitd_variance_bound(const ProblemConstants& c, double lambda, int N) {
  return lambda * (N + 1.0) * c.L_g * c.L_g * c.M * c.M / c.mu;
}

Vec reference_lower_opt(const BilevelProblem& pb, const Vec& x, Vec y, double tol, int max_iter) {
  for (int it = 0; it < max_iter; ++it) {
    const Point p{x, y};
    const Vec g = mean_grad_lower_y(pb, p);
    if (g.norm() <= tol) break;
    const Vec dy = dense_lower_hessian(pb, p).ldlt().solve(g);
    const double f0 = mean_lower_value(pb, p);
    double t = 1.0;
    while (t > 1e-12 && mean_lower_value(pb, {x, y - t * dy}) > f0 - 1e-4 * t * g.dot(dy)) t *= 0.5;
    y -= t * dy;
    if ((t * dy).norm() <= 1e-15 * (1.0 + y.norm())) break;
  }
  return y;
}

Vec reference_hypergradient(const BilevelProblem& pb, const Vec& x, const Vec& y_star) {
  const Point p{x, y_star};
  const Vec w = dense_lower_hessian(pb, p).ldlt().solve(mean_grad_upper_y(pb, p));
  return mean_grad_upper_x(pb, p) - dense_lower_mixed(pb, p) * w;
}

namespace {

double rel_err(const Vec& a, const Vec& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

class Reporter {
 public:
  explicit Reporter(std::ostream& out) : out_(out) {}
  void check(const std::string& name, double value, double tol) {
    const bool ok = value <= tol;
    all_ok_ = all_ok_ && ok;
    out_ << (ok ? "PASS " : "FAIL ") << name << ": " << value << " (tol " << tol << ")\n";
  }
  bool ok() const { return all_ok_; }

 private:
  std::ostream& out_;
  bool all_ok_ = true;
};

}  // namespace

bool run_verification_suite(std::ostream& out, std::uint64_t seed) {
  Reporter rep(out);
  double fd = 0.0;
  double stationarity = 0.0;
  double series = 0.0;
  double generic = 0.0;
  double hvp = 0.0;
  double jvp = 0.0;
  double identity = 0.0;
  for (int r = 0; r < 10; ++r) {
    QuadraticSpec spec;
    spec.d1 = 5;
    spec.d2 = 5;
    spec.m = 4;
    spec.n_per_client = 4;
    spec.hetero = 0.5;
    spec.spread = 0.3;
    spec.seed = seed + static_cast<std::uint64_t>(r);
    auto inst = std::make_shared<const QuadraticInstance>(make_quadratic(spec));
    const QuadraticProblem pb(inst);
    Generator g = RngStream(seed, Lane{-1, Purpose::kTrial, 0, static_cast<std::uint64_t>(r), 0}).generator();
    const Vec x = g.normal_vec(spec.d1);
    const Vec ys = closed_form_lower_opt(*inst, x);
    const Vec hg = closed_form_hypergradient(*inst, x);
    fd = std::max(fd, rel_err(fd_hypergradient(*inst, x), hg));
    stationarity = std::max(stationarity, mean_grad_lower_y(pb, {x, ys}).norm());
    const Vec v = g.normal_vec(spec.d2);
    const double lambda = 1.0 / inst->constants().L_g;
    series = std::max(series, rel_err(neumann_hessiv(*inst, v, lambda, 500), dense_hessiv(*inst, x, ys, v)));
    generic = std::max(generic, rel_err(reference_hypergradient(pb, x, reference_lower_opt(pb, x, Vec::Zero(spec.d2))), hg));
    const Point p{x, g.normal_vec(spec.d2)};
    hvp = std::max(hvp, rel_err(pb.hvp_lower_yy(0, p, v, Batch::exact()), fd_lower_hvp(pb, 0, p, v)));
    jvp = std::max(jvp, rel_err(pb.jvp_lower_xy(0, p, v, Batch::exact()), fd_lower_jvp(pb, 0, p, v)));

    // Q enumeration against the closed conditional expectation.
    const NoiseFree nf(std::make_shared<const QuadraticProblem>(inst));
    AggItdConfig cfg;
    cfg.N = 4;
    cfg.lambda = lambda;
    cfg.lower.beta = 1.0 / (6.0 * inst->constants().L_g);
    const std::vector<ClientId> all{0, 1, 2, 3};
    Vec acc = Vec::Zero(spec.d1);
    std::vector<Vec> traj;
    for (int Q = 0; Q <= cfg.N; ++Q) {
      CommLedger ledger;
      const auto res = aggitd(nf, x, Vec::Zero(spec.d2), cfg, all, StreamFactory(seed, 0), ledger, Q);
      acc += res.trace.h_indirect;
      traj = res.trace.y_iterates;
    }
    acc /= cfg.N + 1.0;
    identity = std::max(identity, (acc - expected_aggitd_indirect(nf, x, traj, lambda, cfg.N)).lpNorm<Eigen::Infinity>());
  }
  rep.check("finite-difference vs closed-form hypergradient (rel)", fd, 1e-5);
  rep.check("aggregate lower gradient at closed-form y*", stationarity, 1e-10);
  rep.check("Neumann series (500 terms) vs Cholesky solve (rel)", series, 1e-6);
  rep.check("Newton + dense solve vs closed-form hypergradient (rel)", generic, 1e-8);
  rep.check("quadratic hvp vs finite differences (rel)", hvp, 1e-6);
  rep.check("quadratic mixed product vs finite differences (rel)", jvp, 1e-6);
  rep.check("Q-enumerated indirect part vs conditional expectation (abs)", identity, 1e-12);

  HyperRepSpec hs;
  hs.n_points = 80;
  hs.test_points = 20;
  const auto hr = make_hyperrep(hs, seed);
  Generator g = RngStream(seed, Lane{-1, Purpose::kTrial, 1, 0, 0}).generator();
  const Point p{hr->initial_point().x, 0.3 * g.normal_vec(hr->dim_y())};
  const Vec v = g.normal_vec(hr->dim_y());
  rep.check("logistic head hvp vs finite differences (rel)",
            rel_err(hr->hvp_lower_yy(0, p, v, Batch::exact()), fd_lower_hvp(*hr, 0, p, v)), 1e-6);
  rep.check("logistic head mixed product vs finite differences (rel)",
            rel_err(hr->jvp_lower_xy(0, p, v, Batch::exact()), fd_lower_jvp(*hr, 0, p, v)), 1e-6);
  return rep.ok();
}

}  // namespace fbo
