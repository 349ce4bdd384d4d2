// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fbo/problem.hpp"

namespace fbo {

/// Labelled points, one row per point.
struct Dataset {
  Mat features;
  std::vector<int> labels;
  int classes = 0;

  int size() const { return static_cast<int>(labels.size()); }
};

enum class PartitionMode { kIid, kLabelSkew };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::kIid;
  int shards_per_client = 1;  // label-skew only
  int num_shards = 0;         // label-skew only; 0 means shards_per_client * m
};

/// Balanced Gaussian mixture: class k has mean `separation * u_k` for a
/// random unit vector u_k and identity covariance. Points are interleaved
/// by class, so any prefix is close to balanced.
Dataset make_gaussian_mixture(int n, int dim, int classes, double separation, std::uint64_t seed);

/// Splits point indices among m clients. The lists are disjoint and cover
/// every index.
///
/// iid: shuffled, near-equal contiguous chunks.
/// label-skew: indices sorted by label are cut into `num_shards` equal
/// shards; every client receives `shards_per_client` random shards and any
/// remaining shards are dealt round-robin.
std::vector<std::vector<int>> partition(const std::vector<int>& labels, const PartitionSpec& spec, int m,
                                        std::uint64_t seed);

struct HyperRepSpec {
  int embed_dim = 4;
  int feature_dim = 8;
  int classes = 3;
  double ridge = 0.1;  // lower-level strong convexity
  int m = 4;
  int n_points = 400;  // split among clients
  int test_points = 400;
  double val_fraction = 0.5;  // share of each client's points used by the upper objective
  double separation = 2.0;
  int batch = 8;
  PartitionSpec partition;
};

/// Hyper-representation problem: the upper variable is a linear embedding
/// W (embed_dim x feature_dim), the lower variable a multinomial logistic
/// head Y (classes x embed_dim) with ridge penalty. Lower objective: train
/// cross-entropy + ridge/2 |Y|^2; upper objective: validation cross-entropy.
/// Both variables are stored column-major.
class HyperRepProblem final : public BilevelProblem {
 public:
  HyperRepProblem(const HyperRepSpec& spec, Dataset data, std::vector<std::vector<int>> parts, Dataset test,
                  std::uint64_t seed);

  int num_clients() const override { return static_cast<int>(train_.size()); }
  int dim_x() const override { return spec_.embed_dim * spec_.feature_dim; }
  int dim_y() const override { return spec_.classes * spec_.embed_dim; }
  const ProblemConstants& constants() const override { return constants_; }
  std::string kind() const override { return "hyperrep"; }
  double task_metric(const Point& p) const override;

  /// Random embedding, zero head.
  Point initial_point() const override { return initial_; }
  const std::vector<int>& train_indices(ClientId i) const { return train_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& val_indices(ClientId i) const { return val_.at(static_cast<std::size_t>(i)); }
  const Dataset& data() const { return data_; }
  const HyperRepSpec& spec() const { return spec_; }

  /// Fraction of test points classified correctly.
  double accuracy(const Point& p, const Dataset& set) const;

 protected:
  Vec do_grad_lower_y(ClientId i, const Point& p, const Batch& b) const override;
  Vec do_grad_upper_x(ClientId i, const Point& p, const Batch& b) const override;
  Vec do_grad_upper_y(ClientId i, const Point& p, const Batch& b) const override;
  Vec do_hvp_lower_yy(ClientId i, const Point& p, const Vec& v, const Batch& b) const override;
  Vec do_jvp_lower_xy(ClientId i, const Point& p, const Vec& v, const Batch& b) const override;
  double do_upper_value(ClientId i, const Point& p) const override;
  double do_lower_value(ClientId i, const Point& p) const override;

 private:
  std::vector<int> batch_points(const std::vector<int>& pool, const Batch& b) const;

  HyperRepSpec spec_;
  Dataset data_;
  Dataset test_;
  std::vector<std::vector<int>> train_;
  std::vector<std::vector<int>> val_;
  ProblemConstants constants_;
  Point initial_;
};

/// Builds the data, the partition and the problem from one seed.
std::shared_ptr<HyperRepProblem> make_hyperrep(const HyperRepSpec& spec, std::uint64_t seed);

}  // namespace fbo
