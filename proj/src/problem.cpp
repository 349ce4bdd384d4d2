// SPDX-License-Identifier: Apache-2.0
#include "fbo/problem.hpp"

#include <string>

#include "fbo/errors.hpp"

namespace fbo {

ProblemConstants ProblemConstants::make(double mu, double L_g, double L_f, double M, double rho,
                                        double sigma_f, double sigma_g) {
  if (!(mu > 0.0)) throw ParameterError("mu", "must be positive");
  if (!(L_g >= mu)) throw ParameterError("L_g", "must be at least mu");
  ProblemConstants c;
  c.mu = mu;
  c.L_g = L_g;
  c.L_f = L_f;
  c.M = M;
  c.rho = rho;
  c.sigma_f = sigma_f;
  c.sigma_g = sigma_g;
  c.kappa_g = L_g / mu;
  return c;
}

void BilevelProblem::check_client(ClientId i) const {
  if (i < 0 || i >= num_clients()) {
    throw LookupError("unknown client " + std::to_string(i) + " (m = " +
                      std::to_string(num_clients()) + ")");
  }
}

void BilevelProblem::check_point(const Point& p) const {
  if (p.x.size() != dim_x() || p.y.size() != dim_y()) {
    throw ContractError("point dimensions (" + std::to_string(p.x.size()) + ", " +
                        std::to_string(p.y.size()) + ") do not match problem (" +
                        std::to_string(dim_x()) + ", " + std::to_string(dim_y()) + ")");
  }
}

namespace {

void check_vec(const Vec& v, int dim, const char* what) {
  if (v.size() != dim) {
    throw ContractError(std::string(what) + " has dimension " + std::to_string(v.size()) +
                        ", expected " + std::to_string(dim));
  }
  if (!v.allFinite()) throw ContractError(std::string(what) + " is not finite");
}

}  // namespace

Vec BilevelProblem::grad_lower_y(ClientId i, const Point& p, const Batch& b) const {
  check_client(i);
  check_point(p);
  return do_grad_lower_y(i, p, b);
}

Vec BilevelProblem::grad_upper_x(ClientId i, const Point& p, const Batch& b) const {
  check_client(i);
  check_point(p);
  return do_grad_upper_x(i, p, b);
}

Vec BilevelProblem::grad_upper_y(ClientId i, const Point& p, const Batch& b) const {
  check_client(i);
  check_point(p);
  return do_grad_upper_y(i, p, b);
}

Vec BilevelProblem::hvp_lower_yy(ClientId i, const Point& p, const Vec& v, const Batch& b) const {
  check_client(i);
  check_point(p);
  check_vec(v, dim_y(), "hvp direction");
  return do_hvp_lower_yy(i, p, v, b);
}

Vec BilevelProblem::jvp_lower_xy(ClientId i, const Point& p, const Vec& v, const Batch& b) const {
  check_client(i);
  check_point(p);
  check_vec(v, dim_y(), "jvp direction");
  return do_jvp_lower_xy(i, p, v, b);
}

double BilevelProblem::upper_value(ClientId i, const Point& p) const {
  check_client(i);
  check_point(p);
  return do_upper_value(i, p);
}

double BilevelProblem::lower_value(ClientId i, const Point& p) const {
  check_client(i);
  check_point(p);
  return do_lower_value(i, p);
}

namespace {

template <typename Fn>
Vec client_mean(const BilevelProblem& pb, Fn&& fn) {
  Vec acc = fn(0);
  for (ClientId i = 1; i < pb.num_clients(); ++i) acc += fn(i);
  return acc / static_cast<double>(pb.num_clients());
}

}  // namespace

Vec mean_grad_lower_y(const BilevelProblem& pb, const Point& p) {
  return client_mean(pb, [&](ClientId i) { return pb.grad_lower_y(i, p, Batch::exact()); });
}

Vec mean_grad_upper_x(const BilevelProblem& pb, const Point& p) {
  return client_mean(pb, [&](ClientId i) { return pb.grad_upper_x(i, p, Batch::exact()); });
}

Vec mean_grad_upper_y(const BilevelProblem& pb, const Point& p) {
  return client_mean(pb, [&](ClientId i) { return pb.grad_upper_y(i, p, Batch::exact()); });
}

Vec mean_hvp_lower_yy(const BilevelProblem& pb, const Point& p, const Vec& v) {
  return client_mean(pb, [&](ClientId i) { return pb.hvp_lower_yy(i, p, v, Batch::exact()); });
}

Vec mean_jvp_lower_xy(const BilevelProblem& pb, const Point& p, const Vec& v) {
  return client_mean(pb, [&](ClientId i) { return pb.jvp_lower_xy(i, p, v, Batch::exact()); });
}

double mean_upper_value(const BilevelProblem& pb, const Point& p) {
  double acc = 0.0;
  for (ClientId i = 0; i < pb.num_clients(); ++i) acc += pb.upper_value(i, p);
  return acc / pb.num_clients();
}

double mean_lower_value(const BilevelProblem& pb, const Point& p) {
  double acc = 0.0;
  for (ClientId i = 0; i < pb.num_clients(); ++i) acc += pb.lower_value(i, p);
  return acc / pb.num_clients();
}

Mat dense_lower_hessian(const BilevelProblem& pb, const Point& p) {
  const int d2 = pb.dim_y();
  Mat H(d2, d2);
  for (int j = 0; j < d2; ++j) H.col(j) = mean_hvp_lower_yy(pb, p, Vec::Unit(d2, j));
  return 0.5 * (H + H.transpose());
}

Mat dense_lower_mixed(const BilevelProblem& pb, const Point& p) {
  const int d2 = pb.dim_y();
  Mat J(pb.dim_x(), d2);
  for (int j = 0; j < d2; ++j) J.col(j) = mean_jvp_lower_xy(pb, p, Vec::Unit(d2, j));
  return J;
}

}  // namespace fbo
