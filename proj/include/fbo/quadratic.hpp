// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fbo/problem.hpp"

namespace fbo {

enum class NoiseMode {
  kFiniteSum,  // mini-batches drawn from the per-client sample list
  kGaussian,   // client-level gradient plus isotropic Gaussian noise
};

struct NoiseModel {
  NoiseMode mode = NoiseMode::kFiniteSum;
  double std_lower = 0.0;  // per-coordinate std added to grad_y G (gaussian mode)
  double std_upper = 0.0;  // per-coordinate std added to grad F (gaussian mode)
  int batch = 1;           // finite-sum mini-batch size

  bool operator==(const NoiseModel&) const = default;
};

/// One sample of a client:
///   G(x, y) = 1/2 y'Ay + y'Bx + c'y
///   F(x, y) = 1/2 |y - d|^2 + rho_x/2 |x|^2 + e'x
struct QuadraticSample {
  Mat A;  // d2 x d2, SPD
  Mat B;  // d2 x d1
  Vec c;  // d2
  Vec d;  // d2
  Vec e;  // d1
};

/// Client-level objective (the sample mean) plus its samples.
struct QuadraticClient {
  QuadraticSample mean;
  std::vector<QuadraticSample> samples;
};

struct QuadraticSpec {
  int d1 = 10;
  int d2 = 10;
  int m = 8;
  int n_per_client = 16;
  double mu = 1.0;
  double L_g = 10.0;
  double hetero = 0.0;        // in [0, 1]; 0 gives identical clients
  double rho_x = 1.0;
  double coupling = 1.0;      // spectral norm of the shared coupling block
  double offset_scale = 1.0;  // scale of the linear terms c, d, e
  double spread = 0.0;        // per-sample spread in [0, 1); 0 gives identical samples
  NoiseModel noise;
  std::uint64_t seed = 0;
};

/// Heterogeneous quadratic bilevel instance with closed-form ground truth.
class QuadraticInstance {
 public:
  /// Assembles an instance from explicit clients. Clients without samples
  /// get a single sample equal to their mean. Aggregates are recomputed.
  QuadraticInstance(int d1, int d2, double rho_x, std::vector<QuadraticClient> clients,
                    NoiseModel noise = {}, std::uint64_t seed = 0);

  int d1() const { return d1_; }
  int d2() const { return d2_; }
  int m() const { return static_cast<int>(clients_.size()); }
  double rho_x() const { return rho_x_; }
  std::uint64_t seed() const { return seed_; }
  const NoiseModel& noise() const { return noise_; }
  const std::vector<QuadraticClient>& clients() const { return clients_; }
  const QuadraticClient& client(int i) const { return clients_.at(static_cast<std::size_t>(i)); }

  const Mat& A_bar() const { return A_bar_; }
  const Mat& B_bar() const { return B_bar_; }
  const Vec& c_bar() const { return c_bar_; }
  const Vec& d_bar() const { return d_bar_; }
  const Vec& e_bar() const { return e_bar_; }

  /// Solves A_bar w = v.
  Vec solve_A_bar(const Vec& v) const { return A_bar_llt_.solve(v); }

  const ProblemConstants& constants() const { return constants_; }
  void set_constants(const ProblemConstants& c) { constants_ = c; }

 private:
  int d1_;
  int d2_;
  double rho_x_;
  std::vector<QuadraticClient> clients_;
  NoiseModel noise_;
  std::uint64_t seed_;
  Mat A_bar_;
  Mat B_bar_;
  Vec c_bar_;
  Vec d_bar_;
  Vec e_bar_;
  Eigen::LLT<Mat> A_bar_llt_;
  ProblemConstants constants_;
};

/// Generates a random instance. Every sampled Hessian has its spectrum in
/// [mu, L_g] and every coupling block has spectral norm at most L_g.
QuadraticInstance make_quadratic(const QuadraticSpec& spec);

/// y*(x) = -A_bar^{-1} (B_bar x + c_bar)
Vec closed_form_lower_opt(const QuadraticInstance& inst, const Vec& x);

/// Implicit hypergradient at (x, y*(x)):
///   rho_x x + e_bar - B_bar' A_bar^{-1} (y*(x) - d_bar)
Vec closed_form_hypergradient(const QuadraticInstance& inst, const Vec& x);

/// f(x, y) = mean_i f_i(x, y).
double upper_objective(const QuadraticInstance& inst, const Vec& x, const Vec& y);

/// max_i |A_i - A_bar|_2; grows with the hetero knob.
double hessian_dissimilarity(const QuadraticInstance& inst);

/// Oracle view of an instance.
class QuadraticProblem final : public BilevelProblem {
 public:
  explicit QuadraticProblem(std::shared_ptr<const QuadraticInstance> inst) : inst_(std::move(inst)) {}
  explicit QuadraticProblem(QuadraticInstance inst)
      : inst_(std::make_shared<const QuadraticInstance>(std::move(inst))) {}

  int num_clients() const override { return inst_->m(); }
  int dim_x() const override { return inst_->d1(); }
  int dim_y() const override { return inst_->d2(); }
  const ProblemConstants& constants() const override { return inst_->constants(); }
  std::string kind() const override { return "quadratic"; }

  const QuadraticInstance& instance() const { return *inst_; }
  std::shared_ptr<const QuadraticInstance> instance_ptr() const { return inst_; }

 protected:
  Vec do_grad_lower_y(ClientId i, const Point& p, const Batch& b) const override;
  Vec do_grad_upper_x(ClientId i, const Point& p, const Batch& b) const override;
  Vec do_grad_upper_y(ClientId i, const Point& p, const Batch& b) const override;
  Vec do_hvp_lower_yy(ClientId i, const Point& p, const Vec& v, const Batch& b) const override;
  Vec do_jvp_lower_xy(ClientId i, const Point& p, const Vec& v, const Batch& b) const override;
  double do_upper_value(ClientId i, const Point& p) const override;
  double do_lower_value(ClientId i, const Point& p) const override;

 private:
  std::shared_ptr<const QuadraticInstance> inst_;
};

/// Returns the quadratic instance behind `pb` (looking through NoiseFree
/// views), or nullptr.
const QuadraticInstance* as_quadratic(const BilevelProblem& pb);

}  // namespace fbo
