// SPDX-License-Identifier: Apache-2.0
#include "fbo/quadratic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fbo/errors.hpp"

namespace fbo {

namespace {

void check_sample(const QuadraticSample& s, int d1, int d2, const std::string& where) {
  const bool ok = s.A.rows() == d2 && s.A.cols() == d2 && s.B.rows() == d2 && s.B.cols() == d1 &&
                  s.c.size() == d2 && s.d.size() == d2 && s.e.size() == d1;
  if (!ok) throw ContractError(where + ": block dimensions do not match (d1, d2)");
}

Vec lower_grad(const QuadraticSample& s, const Point& p) { return s.A * p.y + s.B * p.x + s.c; }
Vec upper_grad_x(const QuadraticSample& s, double rho_x, const Point& p) { return rho_x * p.x + s.e; }
Vec upper_grad_y(const QuadraticSample& s, const Point& p) { return p.y - s.d; }

}  // namespace

QuadraticInstance::QuadraticInstance(int d1, int d2, double rho_x,
                                     std::vector<QuadraticClient> clients, NoiseModel noise,
                                     std::uint64_t seed)
    : d1_(d1), d2_(d2), rho_x_(rho_x), clients_(std::move(clients)), noise_(noise), seed_(seed) {
  if (d1_ < 1 || d2_ < 1) throw ParameterError("dims", "d1 and d2 must be positive");
  if (clients_.empty()) throw ParameterError("m", "need at least one client");
  if (noise_.batch < 1) throw ParameterError("noise.batch", "must be at least 1");
  if (noise_.std_lower < 0.0 || noise_.std_upper < 0.0)
    throw ParameterError("noise.std", "must be nonnegative");

  A_bar_ = Mat::Zero(d2_, d2_);
  B_bar_ = Mat::Zero(d2_, d1_);
  c_bar_ = Vec::Zero(d2_);
  d_bar_ = Vec::Zero(d2_);
  e_bar_ = Vec::Zero(d1_);
  for (std::size_t i = 0; i < clients_.size(); ++i) {
    QuadraticClient& cl = clients_[i];
    check_sample(cl.mean, d1_, d2_, "client " + std::to_string(i));
    if (cl.samples.empty()) cl.samples.push_back(cl.mean);
    for (const QuadraticSample& s : cl.samples) check_sample(s, d1_, d2_, "client sample");
    A_bar_ += cl.mean.A;
    B_bar_ += cl.mean.B;
    c_bar_ += cl.mean.c;
    d_bar_ += cl.mean.d;
    e_bar_ += cl.mean.e;
  }
  const double inv_m = 1.0 / static_cast<double>(clients_.size());
  A_bar_ *= inv_m;
  B_bar_ *= inv_m;
  c_bar_ *= inv_m;
  d_bar_ *= inv_m;
  e_bar_ *= inv_m;
  A_bar_llt_.compute(A_bar_);
  if (A_bar_llt_.info() != Eigen::Success) throw ParameterError("A", "mean Hessian is not positive definite");

  // Constants measured from the data; generators overwrite mu/L_g with the
  // declared (looser) range.
  double mu = INFINITY;
  double L_g = 0.0;
  for (const QuadraticClient& cl : clients_) {
    for (const QuadraticSample& s : cl.samples) {
      const Vec ev = sym_eigenvalues(s.A);
      mu = std::min(mu, ev(0));
      L_g = std::max({L_g, ev(ev.size() - 1), spectral_norm(s.B)});
    }
  }
  if (!(mu > 0.0)) throw ParameterError("A", "sampled Hessians must be positive definite");

  // Default test region: ball of radius 1 around (0, y*(0)).
  const Vec y_c = -A_bar_llt_.solve(c_bar_);
  const Point center{Vec::Zero(d1_), y_c};
  double M = 0.0;
  double s1 = 0.0, s2 = 0.0, f1 = 0.0, f2 = 0.0;
  const Vec g_bar = A_bar_ * y_c + c_bar_;
  const Vec fy_bar = y_c - d_bar_;
  const Vec fx_bar = e_bar_;
  for (const QuadraticClient& cl : clients_) {
    double v_low = 0.0, v_up = 0.0;
    for (const QuadraticSample& s : cl.samples) {
      const double gx = rho_x_ + s.e.norm();
      const double gy = (y_c - s.d).norm() + 1.0;
      M = std::max(M, std::sqrt(gx * gx + gy * gy));
      v_low += (lower_grad(s, center) - lower_grad(cl.mean, center)).squaredNorm();
      v_up += (upper_grad_y(s, center) - upper_grad_y(cl.mean, center)).squaredNorm() +
              (upper_grad_x(s, rho_x_, center) - upper_grad_x(cl.mean, rho_x_, center)).squaredNorm();
    }
    const double n = static_cast<double>(cl.samples.size());
    s1 = std::max(s1, v_low / n / noise_.batch);
    f1 = std::max(f1, v_up / n / noise_.batch);
    s2 += (lower_grad(cl.mean, center) - g_bar).squaredNorm();
    f2 += (upper_grad_y(cl.mean, center) - fy_bar).squaredNorm() +
          (upper_grad_x(cl.mean, rho_x_, center) - fx_bar).squaredNorm();
  }
  s2 *= inv_m;
  f2 *= inv_m;
  if (noise_.mode == NoiseMode::kGaussian) {
    s1 = noise_.std_lower * noise_.std_lower * d2_;
    f1 = noise_.std_upper * noise_.std_upper * (d1_ + d2_);
  }
  const double sigma_g = std::sqrt(std::max(s1, s2));
  const double sigma_f = std::sqrt(std::max(f1, f2));
  constants_ = ProblemConstants::make(mu, L_g, std::max(rho_x_, 1.0), M, 0.0, sigma_f, sigma_g);
}

namespace {

Mat random_orthogonal(Generator& gen, int n) {
  const Mat g = gen.normal_mat(n, n);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(n, n);
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

Mat spd_with_spectrum(Generator& gen, const Vec& eig) {
  const Mat q = random_orthogonal(gen, static_cast<int>(eig.size()));
  Mat a = q * eig.asDiagonal() * q.transpose();
  return 0.5 * (a + a.transpose());
}

Mat scaled_to_norm(Mat m, double target) {
  const double n = spectral_norm(m);
  if (n > 0.0) m *= target / n;
  return m;
}

/// Zero-mean perturbations with the largest one scaled to `radius` (spectral
/// norm for matrices, Euclidean for vectors).
template <typename T, typename Draw, typename Norm>
std::vector<T> centered_perturbations(int n, double radius, Draw&& draw, Norm&& norm) {
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out.push_back(draw());
  T mean = out.front();
  for (int j = 1; j < n; ++j) mean += out[static_cast<std::size_t>(j)];
  mean /= static_cast<double>(n);
  double biggest = 0.0;
  for (T& t : out) {
    t -= mean;
    biggest = std::max(biggest, norm(t));
  }
  const double scale = (biggest > 0.0 && radius > 0.0) ? radius / biggest : 0.0;
  for (T& t : out) t *= scale;
  return out;
}

}  // namespace

QuadraticInstance make_quadratic(const QuadraticSpec& spec) {
  if (spec.d1 < 1 || spec.d2 < 1) throw ParameterError("dims", "d1 and d2 must be positive");
  if (spec.m < 1) throw ParameterError("m", "need at least one client");
  if (spec.n_per_client < 1) throw ParameterError("n_per_client", "need at least one sample");
  if (!(spec.mu > 0.0)) throw ParameterError("mu", "must be positive");
  if (!(spec.L_g >= spec.mu)) throw ParameterError("L_g", "infeasible eigenvalue range: L_g < mu");
  if (!(spec.hetero >= 0.0 && spec.hetero <= 1.0)) throw ParameterError("hetero", "must lie in [0, 1]");
  if (!(spec.spread >= 0.0 && spec.spread < 1.0)) throw ParameterError("spread", "must lie in [0, 1)");
  if (!(spec.coupling >= 0.0)) throw ParameterError("coupling", "must be nonnegative");

  const int d1 = spec.d1, d2 = spec.d2;
  const double h = spec.hetero;
  const double width = spec.spread * (spec.L_g - spec.mu) / 2.0;
  const double lo = spec.mu + width;
  const double hi = spec.L_g - width;

  auto gen_for = [&](std::int64_t client, std::uint64_t what) {
    return RngStream(spec.seed, Lane{client, Purpose::kGenerate, 0, what, 0}).generator();
  };

  // Shared components.
  Generator shared = gen_for(-1, 0);
  Vec base_eig(d2);
  for (int k = 0; k < d2; ++k)
    base_eig(k) = d2 == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / (d2 - 1);
  const Mat A0 = spd_with_spectrum(shared, base_eig);
  const Mat B0 = scaled_to_norm(shared.normal_mat(d2, d1), spec.coupling);
  const Vec c0 = spec.offset_scale * shared.normal_vec(d2);
  const Vec d0 = spec.offset_scale * shared.normal_vec(d2);
  const Vec e0 = spec.offset_scale * shared.normal_vec(d1);

  std::vector<QuadraticClient> clients;
  clients.reserve(static_cast<std::size_t>(spec.m));
  for (int i = 0; i < spec.m; ++i) {
    // Client-specific draws are made regardless of h so that the
    // dissimilarity scales linearly in h for a fixed seed.
    Generator g = gen_for(i, 1);
    Vec eig(d2);
    for (int k = 0; k < d2; ++k) eig(k) = lo + (hi - lo) * g.uniform();
    const Mat C = spd_with_spectrum(g, eig);
    const Mat E = scaled_to_norm(g.normal_mat(d2, d1), spec.coupling);
    const Vec dc = spec.offset_scale * g.normal_vec(d2);
    const Vec dd = spec.offset_scale * g.normal_vec(d2);
    const Vec de = spec.offset_scale * g.normal_vec(d1);

    QuadraticClient cl;
    cl.mean.A = (1.0 - h) * A0 + h * C;
    cl.mean.A = 0.5 * (cl.mean.A + cl.mean.A.transpose());
    cl.mean.B = B0 + h * E;
    cl.mean.c = c0 + h * dc;
    cl.mean.d = d0 + h * dd;
    cl.mean.e = e0 + h * de;

    const int n = spec.n_per_client;
    Generator gs = gen_for(i, 2);
    auto dA = centered_perturbations<Mat>(
        n, width,
        [&] {
          Mat p = gs.normal_mat(d2, d2);
          return Mat(0.5 * (p + p.transpose()));
        },
        [](const Mat& m) { return spectral_norm(m); });
    auto dB = centered_perturbations<Mat>(
        n, spec.spread * spec.coupling, [&] { return gs.normal_mat(d2, d1); },
        [](const Mat& m) { return spectral_norm(m); });
    const double off = spec.spread * spec.offset_scale;
    auto vec_draw = [&](int dim) { return [&gs, dim] { return gs.normal_vec(dim); }; };
    auto vnorm = [](const Vec& v) { return v.norm(); };
    auto dcs = centered_perturbations<Vec>(n, off, vec_draw(d2), vnorm);
    auto dds = centered_perturbations<Vec>(n, off, vec_draw(d2), vnorm);
    auto des = centered_perturbations<Vec>(n, off, vec_draw(d1), vnorm);
    cl.samples.reserve(static_cast<std::size_t>(n));
    for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
      QuadraticSample s;
      s.A = cl.mean.A + dA[j];
      s.A = 0.5 * (s.A + s.A.transpose());
      s.B = cl.mean.B + dB[j];
      s.c = cl.mean.c + dcs[j];
      s.d = cl.mean.d + dds[j];
      s.e = cl.mean.e + des[j];
      cl.samples.push_back(std::move(s));
    }
    clients.push_back(std::move(cl));
  }

  // Keep every coupling block inside the declared Lipschitz bound.
  double max_b = 0.0;
  for (const auto& cl : clients)
    for (const auto& s : cl.samples) max_b = std::max(max_b, spectral_norm(s.B));
  if (max_b > spec.L_g) {
    const double shrink = spec.L_g / max_b;
    for (auto& cl : clients) {
      cl.mean.B *= shrink;
      for (auto& s : cl.samples) s.B *= shrink;
    }
  }

  QuadraticInstance inst(d1, d2, spec.rho_x, std::move(clients), spec.noise, spec.seed);
  ProblemConstants c = inst.constants();
  c.mu = spec.mu;
  c.L_g = spec.L_g;
  c.kappa_g = spec.L_g / spec.mu;
  inst.set_constants(c);
  return inst;
}

Vec closed_form_lower_opt(const QuadraticInstance& inst, const Vec& x) {
  if (x.size() != inst.d1()) throw ContractError("x has wrong dimension");
  return -inst.solve_A_bar(inst.B_bar() * x + inst.c_bar());
}

Vec closed_form_hypergradient(const QuadraticInstance& inst, const Vec& x) {
  const Vec y_star = closed_form_lower_opt(inst, x);
  return inst.rho_x() * x + inst.e_bar() -
         inst.B_bar().transpose() * inst.solve_A_bar(y_star - inst.d_bar());
}

double upper_objective(const QuadraticInstance& inst, const Vec& x, const Vec& y) {
  double acc = 0.0;
  for (const auto& cl : inst.clients()) {
    acc += 0.5 * (y - cl.mean.d).squaredNorm() + 0.5 * inst.rho_x() * x.squaredNorm() +
           cl.mean.e.dot(x);
  }
  return acc / inst.m();
}

double hessian_dissimilarity(const QuadraticInstance& inst) {
  double worst = 0.0;
  for (const auto& cl : inst.clients()) worst = std::max(worst, spectral_norm(cl.mean.A - inst.A_bar()));
  return worst;
}

// ---------------------------------------------------------------------------
// Oracles

namespace {

std::vector<int> draw_indices(const RngStream& stream, int n, int count) {
  Generator g = stream.generator();
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int& k : idx) k = static_cast<int>(g.index(static_cast<std::size_t>(n)));
  return idx;
}

template <typename Fn>
Vec sample_mean(const QuadraticClient& cl, const std::vector<int>& idx, Fn&& fn) {
  Vec acc = fn(cl.samples.at(static_cast<std::size_t>(idx.front())));
  for (std::size_t k = 1; k < idx.size(); ++k) acc += fn(cl.samples.at(static_cast<std::size_t>(idx[k])));
  return acc / static_cast<double>(idx.size());
}

/// Gradient-type oracle: finite-sum mini-batch, or exact value plus
/// Gaussian noise of the given std.
template <typename Fn>
Vec gradient_oracle(const QuadraticInstance& inst, ClientId i, const Batch& b, double noise_std, Fn&& fn) {
  const QuadraticClient& cl = inst.client(i);
  if (b.is_exact()) return fn(cl.mean);
  if (!b.indices().empty()) return sample_mean(cl, b.indices(), fn);
  const NoiseModel& nm = inst.noise();
  const int n = static_cast<int>(cl.samples.size());
  if (nm.mode == NoiseMode::kFiniteSum) return sample_mean(cl, draw_indices(*b.stream(), n, nm.batch), fn);
  Vec out = fn(cl.mean);
  if (noise_std > 0.0) {
    Generator g = b.stream()->generator();
    out += noise_std * g.normal_vec(out.size());
  }
  return out;
}

/// Second-order oracle: the sample's own matrix. In gaussian mode the
/// matrix comes from a single uniformly drawn sample, which is unbiased
/// and keeps the spectrum inside [mu, L_g].
template <typename Fn>
Vec matrix_oracle(const QuadraticInstance& inst, ClientId i, const Batch& b, Fn&& fn) {
  const QuadraticClient& cl = inst.client(i);
  if (b.is_exact()) return fn(cl.mean);
  if (!b.indices().empty()) return sample_mean(cl, b.indices(), fn);
  const NoiseModel& nm = inst.noise();
  const int n = static_cast<int>(cl.samples.size());
  const int count = nm.mode == NoiseMode::kFiniteSum ? nm.batch : 1;
  return sample_mean(cl, draw_indices(*b.stream(), n, count), fn);
}

}  // namespace

Vec QuadraticProblem::do_grad_lower_y(ClientId i, const Point& p, const Batch& b) const {
  return gradient_oracle(*inst_, i, b, inst_->noise().std_lower,
                         [&](const QuadraticSample& s) { return Vec(lower_grad(s, p)); });
}

Vec QuadraticProblem::do_grad_upper_x(ClientId i, const Point& p, const Batch& b) const {
  const double rho = inst_->rho_x();
  return gradient_oracle(*inst_, i, b, inst_->noise().std_upper,
                         [&](const QuadraticSample& s) { return Vec(upper_grad_x(s, rho, p)); });
}

Vec QuadraticProblem::do_grad_upper_y(ClientId i, const Point& p, const Batch& b) const {
  return gradient_oracle(*inst_, i, b, inst_->noise().std_upper,
                         [&](const QuadraticSample& s) { return Vec(upper_grad_y(s, p)); });
}

Vec QuadraticProblem::do_hvp_lower_yy(ClientId i, const Point&, const Vec& v, const Batch& b) const {
  return matrix_oracle(*inst_, i, b, [&](const QuadraticSample& s) { return Vec(s.A * v); });
}

Vec QuadraticProblem::do_jvp_lower_xy(ClientId i, const Point&, const Vec& v, const Batch& b) const {
  return matrix_oracle(*inst_, i, b, [&](const QuadraticSample& s) { return Vec(s.B.transpose() * v); });
}

double QuadraticProblem::do_upper_value(ClientId i, const Point& p) const {
  const QuadraticSample& s = inst_->client(i).mean;
  return 0.5 * (p.y - s.d).squaredNorm() + 0.5 * inst_->rho_x() * p.x.squaredNorm() + s.e.dot(p.x);
}

double QuadraticProblem::do_lower_value(ClientId i, const Point& p) const {
  const QuadraticSample& s = inst_->client(i).mean;
  return 0.5 * p.y.dot(s.A * p.y) + p.y.dot(s.B * p.x) + s.c.dot(p.y);
}

const QuadraticInstance* as_quadratic(const BilevelProblem& pb) {
  if (const auto* q = dynamic_cast<const QuadraticProblem*>(&pb)) return &q->instance();
  if (const auto* nf = dynamic_cast<const NoiseFree*>(&pb)) return as_quadratic(nf->inner());
  return nullptr;
}

}  // namespace fbo
