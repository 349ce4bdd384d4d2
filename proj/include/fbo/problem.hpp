// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fbo/linalg.hpp"
#include "fbo/rng.hpp"

namespace fbo {

using ClientId = int;

/// Upper variable x (dimension d1) and lower variable y (dimension d2).
struct Point {
  Vec x;
  Vec y;
};

/// Regularity constants of a bilevel instance.
struct ProblemConstants {
  double mu = 1.0;       // strong convexity of every sampled lower objective in y
  double L_g = 1.0;      // Lipschitz modulus of the lower gradient (bounds the mixed partial too)
  double L_f = 1.0;      // Lipschitz modulus of the upper gradient
  double M = 1.0;        // bound on the upper gradient over the test region
  double rho = 0.0;      // Lipschitz modulus of the lower second derivatives
  double sigma_f = 0.0;  // upper gradient noise
  double sigma_g = 0.0;  // lower gradient noise / dissimilarity
  double kappa_g = 1.0;  // L_g / mu

  /// Builds constants with kappa_g = L_g / mu, checking mu > 0 and L_g >= mu.
  static ProblemConstants make(double mu, double L_g, double L_f, double M, double rho,
                               double sigma_f, double sigma_g);
};

/// How an oracle call draws its sample.
///
/// `exact()` evaluates the client-level objective (noise off). A stream
/// draws a mini-batch / noise realization determined by (seed, lane).
/// `of_samples` pins an explicit finite-sum batch.
class Batch {
 public:
  static Batch exact() { return Batch(); }
  static Batch of_samples(std::vector<int> indices) {
    Batch b;
    b.indices_ = std::move(indices);
    return b;
  }
  explicit Batch(const RngStream& stream) : stream_(stream) {}

  bool is_exact() const { return !stream_ && indices_.empty(); }
  const std::optional<RngStream>& stream() const { return stream_; }
  const std::vector<int>& indices() const { return indices_; }

 private:
  Batch() = default;
  std::optional<RngStream> stream_;
  std::vector<int> indices_;
};

/// Per-client stochastic first/second-order oracles for the federated
/// bilevel problem  min_x f(x, y*(x)),  y*(x) = argmin_y g(x, y),
/// with f = mean_i f_i and g = mean_i g_i.
///
/// The public entry points validate the client id and dimensions and then
/// dispatch to the protected hooks. All calls are pure functions of
/// (problem, client, point, batch).
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual int num_clients() const = 0;
  virtual int dim_x() const = 0;
  virtual int dim_y() const = 0;
  virtual const ProblemConstants& constants() const = 0;
  virtual std::string kind() const = 0;

  /// grad_y G_i(x, y; batch)
  Vec grad_lower_y(ClientId i, const Point& p, const Batch& b) const;
  /// grad_x F_i(x, y; batch)
  Vec grad_upper_x(ClientId i, const Point& p, const Batch& b) const;
  /// grad_y F_i(x, y; batch)
  Vec grad_upper_y(ClientId i, const Point& p, const Batch& b) const;
  /// grad_yy G_i(x, y; batch) v
  Vec hvp_lower_yy(ClientId i, const Point& p, const Vec& v, const Batch& b) const;
  /// grad_x grad_y G_i(x, y; batch) v, a vector in R^{d1}
  Vec jvp_lower_xy(ClientId i, const Point& p, const Vec& v, const Batch& b) const;

  /// Noise-off objective values f_i(x, y), g_i(x, y).
  double upper_value(ClientId i, const Point& p) const;
  double lower_value(ClientId i, const Point& p) const;

  /// Task metric (e.g. test accuracy) at a point; 0 when the problem has none.
  virtual double task_metric(const Point&) const { return 0.0; }

  /// Default starting point of a run; zero unless the problem needs
  /// symmetry breaking.
  virtual Point initial_point() const { return {Vec::Zero(dim_x()), Vec::Zero(dim_y())}; }

  void check_point(const Point& p) const;
  void check_client(ClientId i) const;

 protected:
  virtual Vec do_grad_lower_y(ClientId i, const Point& p, const Batch& b) const = 0;
  virtual Vec do_grad_upper_x(ClientId i, const Point& p, const Batch& b) const = 0;
  virtual Vec do_grad_upper_y(ClientId i, const Point& p, const Batch& b) const = 0;
  virtual Vec do_hvp_lower_yy(ClientId i, const Point& p, const Vec& v, const Batch& b) const = 0;
  virtual Vec do_jvp_lower_xy(ClientId i, const Point& p, const Vec& v, const Batch& b) const = 0;
  virtual double do_upper_value(ClientId i, const Point& p) const = 0;
  virtual double do_lower_value(ClientId i, const Point& p) const = 0;
};

/// View of a problem whose oracles ignore the batch and always evaluate
/// the client-level objective.
class NoiseFree final : public BilevelProblem {
 public:
  explicit NoiseFree(std::shared_ptr<const BilevelProblem> inner) : inner_(std::move(inner)) {}

  int num_clients() const override { return inner_->num_clients(); }
  int dim_x() const override { return inner_->dim_x(); }
  int dim_y() const override { return inner_->dim_y(); }
  const ProblemConstants& constants() const override { return inner_->constants(); }
  std::string kind() const override { return inner_->kind(); }
  double task_metric(const Point& p) const override { return inner_->task_metric(p); }
  Point initial_point() const override { return inner_->initial_point(); }
  const BilevelProblem& inner() const { return *inner_; }

 protected:
  Vec do_grad_lower_y(ClientId i, const Point& p, const Batch&) const override {
    return inner_->grad_lower_y(i, p, Batch::exact());
  }
  Vec do_grad_upper_x(ClientId i, const Point& p, const Batch&) const override {
    return inner_->grad_upper_x(i, p, Batch::exact());
  }
  Vec do_grad_upper_y(ClientId i, const Point& p, const Batch&) const override {
    return inner_->grad_upper_y(i, p, Batch::exact());
  }
  Vec do_hvp_lower_yy(ClientId i, const Point& p, const Vec& v, const Batch&) const override {
    return inner_->hvp_lower_yy(i, p, v, Batch::exact());
  }
  Vec do_jvp_lower_xy(ClientId i, const Point& p, const Vec& v, const Batch&) const override {
    return inner_->jvp_lower_xy(i, p, v, Batch::exact());
  }
  double do_upper_value(ClientId i, const Point& p) const override { return inner_->upper_value(i, p); }
  double do_lower_value(ClientId i, const Point& p) const override { return inner_->lower_value(i, p); }

 private:
  std::shared_ptr<const BilevelProblem> inner_;
};

// Noise-off aggregates over the full client set.
Vec mean_grad_lower_y(const BilevelProblem& pb, const Point& p);
Vec mean_grad_upper_x(const BilevelProblem& pb, const Point& p);
Vec mean_grad_upper_y(const BilevelProblem& pb, const Point& p);
Vec mean_hvp_lower_yy(const BilevelProblem& pb, const Point& p, const Vec& v);
Vec mean_jvp_lower_xy(const BilevelProblem& pb, const Point& p, const Vec& v);
double mean_upper_value(const BilevelProblem& pb, const Point& p);
double mean_lower_value(const BilevelProblem& pb, const Point& p);

/// Dense aggregate lower Hessian (d2 x d2) and mixed block (d1 x d2),
/// assembled column by column from the noise-off product oracles.
Mat dense_lower_hessian(const BilevelProblem& pb, const Point& p);
Mat dense_lower_mixed(const BilevelProblem& pb, const Point& p);

}  // namespace fbo
