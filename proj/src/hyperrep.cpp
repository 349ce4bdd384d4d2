// SPDX-License-Identifier: Apache-2.0
#include "fbo/hyperrep.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "fbo/errors.hpp"

namespace fbo {

namespace {

Generator generator_for(std::uint64_t seed, Purpose purpose, std::uint64_t inner) {
  return RngStream(seed, Lane{-1, purpose, 0, inner, 0}).generator();
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, Generator& g) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[g.index(i)]);
}

Vec flatten(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

Vec softmax(const Vec& z) {
  const Vec e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

double cross_entropy(const Vec& z, int label) {
  const double zmax = z.maxCoeff();
  return zmax + std::log((z.array() - zmax).exp().sum()) - z(label);
}

// (diag(p) - p p') w
Vec softmax_jacobian_times(const Vec& prob, const Vec& w) {
  return prob.cwiseProduct(w) - prob * prob.dot(w);
}

}  // namespace

Dataset make_gaussian_mixture(int n, int dim, int classes, double separation, std::uint64_t seed) {
  if (n < 1) throw ParameterError("n", "must be positive");
  if (dim < 1) throw ParameterError("dim", "must be positive");
  if (classes < 2) throw ParameterError("classes", "need at least two classes");
  Generator gm = generator_for(seed, Purpose::kGenerate, 10);
  Mat means(classes, dim);
  for (int k = 0; k < classes; ++k) {
    Vec u = gm.normal_vec(dim);
    means.row(k) = separation * u.normalized().transpose();
  }
  Generator gp = generator_for(seed, Purpose::kGenerate, 11);
  Dataset d;
  d.classes = classes;
  d.features.resize(n, dim);
  d.labels.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const int k = j % classes;
    d.labels[static_cast<std::size_t>(j)] = k;
    d.features.row(j) = means.row(k) + gp.normal_vec(dim).transpose();
  }
  return d;
}

std::vector<std::vector<int>> partition(const std::vector<int>& labels, const PartitionSpec& spec, int m,
                                        std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  if (m < 1) throw ParameterError("m", "must be positive");
  if (m > n) throw ParameterError("m", "more clients than points");
  Generator g = generator_for(seed, Purpose::kPartition, 0);
  std::vector<std::vector<int>> parts(static_cast<std::size_t>(m));

  if (spec.mode == PartitionMode::kIid) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    shuffle_in_place(idx, g);
    int pos = 0;
    for (int i = 0; i < m; ++i) {
      const int len = n / m + (i < n % m ? 1 : 0);
      parts[static_cast<std::size_t>(i)].assign(idx.begin() + pos, idx.begin() + pos + len);
      pos += len;
    }
  } else {
    const int k = spec.shards_per_client;
    if (k < 1) throw ParameterError("shards_per_client", "must be positive");
    const int shards = spec.num_shards > 0 ? spec.num_shards : k * m;
    if (static_cast<long long>(k) * m > shards) {
      throw ParameterError("shards_per_client", "shards_per_client * m = " + std::to_string(k * m) +
                                                    " exceeds the shard count " + std::to_string(shards));
    }
    if (shards > n) throw ParameterError("num_shards", "more shards than points");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
    });
    std::vector<int> order(static_cast<std::size_t>(shards));
    std::iota(order.begin(), order.end(), 0);
    shuffle_in_place(order, g);
    auto give = [&](int client, int shard) {
      const int lo = static_cast<int>(static_cast<long long>(shard) * n / shards);
      const int hi = static_cast<int>(static_cast<long long>(shard + 1) * n / shards);
      auto& dst = parts[static_cast<std::size_t>(client)];
      dst.insert(dst.end(), idx.begin() + lo, idx.begin() + hi);
    };
    for (int s = 0; s < shards; ++s) {
      const int client = s < k * m ? s / k : (s - k * m) % m;
      give(client, order[static_cast<std::size_t>(s)]);
    }
  }
  for (auto& p : parts) {
    if (p.empty()) throw ParameterError("m", "empty partition");
    std::sort(p.begin(), p.end());
  }
  return parts;
}

HyperRepProblem::HyperRepProblem(const HyperRepSpec& spec, Dataset data, std::vector<std::vector<int>> parts,
                                 Dataset test, std::uint64_t seed)
    : spec_(spec), data_(std::move(data)), test_(std::move(test)) {
  if (!(spec.ridge > 0.0)) throw ParameterError("ridge", "must be positive");
  if (spec.embed_dim < 1) throw ParameterError("embed_dim", "must be positive");
  if (spec.batch < 1) throw ParameterError("batch", "must be positive");
  if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0)) {
    throw ParameterError("val_fraction", "must lie in (0, 1)");
  }
  if (data_.features.cols() != spec.feature_dim || test_.features.cols() != spec.feature_dim) {
    throw ParameterError("feature_dim", "does not match the data");
  }
  if (parts.empty()) throw ParameterError("m", "empty partition");
  for (const auto& p : parts) {
    const auto n_val = static_cast<std::size_t>(std::lround(spec.val_fraction * static_cast<double>(p.size())));
    if (n_val == 0 || n_val >= p.size()) throw ParameterError("m", "empty partition");
    val_.emplace_back(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_.emplace_back(p.begin() + static_cast<std::ptrdiff_t>(n_val), p.end());
  }

  Generator g = generator_for(seed, Purpose::kGenerate, 12);
  const Mat W0 = g.normal_mat(spec.embed_dim, spec.feature_dim) / std::sqrt(static_cast<double>(spec.feature_dim));
  initial_ = {flatten(W0), Vec::Zero(dim_y())};

  // Heuristic constants, valid while |W a| stays within twice its initial
  // size: the logistic Hessian in z is bounded by 1/2.
  double h_max = 0.0;
  double a_max = 0.0;
  for (int j = 0; j < data_.size(); ++j) {
    const Vec a = data_.features.row(j).transpose();
    h_max = std::max(h_max, (W0 * a).norm());
    a_max = std::max(a_max, a.norm());
  }
  const double h2 = 2.0 * h_max;
  constants_ = ProblemConstants::make(spec.ridge, spec.ridge + 0.5 * h2 * h2, 0.5 * a_max * a_max + 0.5 * h2 * h2,
                                      std::sqrt(2.0) * h2, h2 * h2 * h2, 0.0, 0.0);
}

std::vector<int> HyperRepProblem::batch_points(const std::vector<int>& pool, const Batch& b) const {
  if (b.is_exact()) return pool;
  std::vector<int> out;
  if (!b.indices().empty()) {
    for (int k : b.indices()) {
      if (k < 0 || k >= static_cast<int>(pool.size())) throw ContractError("sample index out of range");
      out.push_back(pool[static_cast<std::size_t>(k)]);
    }
    return out;
  }
  Generator g = b.stream()->generator();
  for (int s = 0; s < spec_.batch; ++s) out.push_back(pool[g.index(pool.size())]);
  return out;
}

namespace {

struct Views {
  Eigen::Map<const Mat> W;
  Eigen::Map<const Mat> Y;
};

Views views(const HyperRepSpec& s, const Point& p) {
  return {Eigen::Map<const Mat>(p.x.data(), s.embed_dim, s.feature_dim),
          Eigen::Map<const Mat>(p.y.data(), s.classes, s.embed_dim)};
}

}  // namespace

Vec HyperRepProblem::do_grad_lower_y(ClientId i, const Point& p, const Batch& b) const {
  const auto [W, Y] = views(spec_, p);
  const auto pts = batch_points(train_[static_cast<std::size_t>(i)], b);
  Mat acc = Mat::Zero(spec_.classes, spec_.embed_dim);
  for (int j : pts) {
    const Vec h = W * data_.features.row(j).transpose();
    Vec g = softmax(Y * h);
    g(data_.labels[static_cast<std::size_t>(j)]) -= 1.0;
    acc += g * h.transpose();
  }
  return flatten(acc / static_cast<double>(pts.size()) + spec_.ridge * Y);
}

Vec HyperRepProblem::do_grad_upper_x(ClientId i, const Point& p, const Batch& b) const {
  const auto [W, Y] = views(spec_, p);
  const auto pts = batch_points(val_[static_cast<std::size_t>(i)], b);
  Mat acc = Mat::Zero(spec_.embed_dim, spec_.feature_dim);
  for (int j : pts) {
    const Vec a = data_.features.row(j).transpose();
    Vec g = softmax(Y * (W * a));
    g(data_.labels[static_cast<std::size_t>(j)]) -= 1.0;
    acc += (Y.transpose() * g) * a.transpose();
  }
  return flatten(acc / static_cast<double>(pts.size()));
}

Vec HyperRepProblem::do_grad_upper_y(ClientId i, const Point& p, const Batch& b) const {
  const auto [W, Y] = views(spec_, p);
  const auto pts = batch_points(val_[static_cast<std::size_t>(i)], b);
  Mat acc = Mat::Zero(spec_.classes, spec_.embed_dim);
  for (int j : pts) {
    const Vec h = W * data_.features.row(j).transpose();
    Vec g = softmax(Y * h);
    g(data_.labels[static_cast<std::size_t>(j)]) -= 1.0;
    acc += g * h.transpose();
  }
  return flatten(acc / static_cast<double>(pts.size()));
}

Vec HyperRepProblem::do_hvp_lower_yy(ClientId i, const Point& p, const Vec& v, const Batch& b) const {
  const auto [W, Y] = views(spec_, p);
  const Eigen::Map<const Mat> V(v.data(), spec_.classes, spec_.embed_dim);
  const auto pts = batch_points(train_[static_cast<std::size_t>(i)], b);
  Mat acc = Mat::Zero(spec_.classes, spec_.embed_dim);
  for (int j : pts) {
    const Vec h = W * data_.features.row(j).transpose();
    const Vec prob = softmax(Y * h);
    acc += softmax_jacobian_times(prob, V * h) * h.transpose();
  }
  return flatten(acc / static_cast<double>(pts.size()) + spec_.ridge * V);
}

Vec HyperRepProblem::do_jvp_lower_xy(ClientId i, const Point& p, const Vec& v, const Batch& b) const {
  const auto [W, Y] = views(spec_, p);
  const Eigen::Map<const Mat> V(v.data(), spec_.classes, spec_.embed_dim);
  const auto pts = batch_points(train_[static_cast<std::size_t>(i)], b);
  Mat acc = Mat::Zero(spec_.embed_dim, spec_.feature_dim);
  for (int j : pts) {
    const Vec a = data_.features.row(j).transpose();
    const Vec h = W * a;
    const Vec prob = softmax(Y * h);
    Vec g = prob;
    g(data_.labels[static_cast<std::size_t>(j)]) -= 1.0;
    const Vec s = softmax_jacobian_times(prob, V * h);
    acc += (V.transpose() * g + Y.transpose() * s) * a.transpose();
  }
  return flatten(acc / static_cast<double>(pts.size()));
}

double HyperRepProblem::do_upper_value(ClientId i, const Point& p) const {
  const auto [W, Y] = views(spec_, p);
  const auto& pts = val_[static_cast<std::size_t>(i)];
  double acc = 0.0;
  for (int j : pts) {
    acc += cross_entropy(Y * (W * data_.features.row(j).transpose()), data_.labels[static_cast<std::size_t>(j)]);
  }
  return acc / static_cast<double>(pts.size());
}

double HyperRepProblem::do_lower_value(ClientId i, const Point& p) const {
  const auto [W, Y] = views(spec_, p);
  const auto& pts = train_[static_cast<std::size_t>(i)];
  double acc = 0.0;
  for (int j : pts) {
    acc += cross_entropy(Y * (W * data_.features.row(j).transpose()), data_.labels[static_cast<std::size_t>(j)]);
  }
  return acc / static_cast<double>(pts.size()) + 0.5 * spec_.ridge * Y.squaredNorm();
}

double HyperRepProblem::accuracy(const Point& p, const Dataset& set) const {
  check_point(p);
  if (set.size() == 0) return 0.0;
  const auto [W, Y] = views(spec_, p);
  int hits = 0;
  for (int j = 0; j < set.size(); ++j) {
    const Vec z = Y * (W * set.features.row(j).transpose());
    Eigen::Index best = 0;
    z.maxCoeff(&best);
    if (best == set.labels[static_cast<std::size_t>(j)]) ++hits;
  }
  return static_cast<double>(hits) / set.size();
}

double HyperRepProblem::task_metric(const Point& p) const { return accuracy(p, test_); }

std::shared_ptr<HyperRepProblem> make_hyperrep(const HyperRepSpec& spec, std::uint64_t seed) {
  if (!(spec.ridge > 0.0)) throw ParameterError("ridge", "must be positive");
  if (spec.test_points < 0) throw ParameterError("test_points", "must be nonnegative");
  Dataset all = make_gaussian_mixture(spec.n_points + spec.test_points, spec.feature_dim, spec.classes,
                                      spec.separation, seed);
  Dataset train;
  Dataset test;
  train.classes = test.classes = all.classes;
  train.features = all.features.topRows(spec.n_points);
  test.features = all.features.bottomRows(spec.test_points);
  train.labels.assign(all.labels.begin(), all.labels.begin() + spec.n_points);
  test.labels.assign(all.labels.begin() + spec.n_points, all.labels.end());
  auto parts = partition(train.labels, spec.partition, spec.m, seed);
  return std::make_shared<HyperRepProblem>(spec, std::move(train), std::move(parts), std::move(test), seed);
}

}  // namespace fbo
