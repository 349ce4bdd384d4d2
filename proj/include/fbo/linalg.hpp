// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace fbo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Arithmetic mean of equally sized vectors, summed in the given order.
inline Vec mean_of(std::span<const Vec> vs) {
  Vec acc = Vec::Zero(vs.front().size());
  for (const Vec& v : vs) acc += v;
  return acc / static_cast<double>(vs.size());
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

/// Largest singular value.
inline double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

/// Eigenvalues of a symmetric matrix in ascending order.
inline Vec sym_eigenvalues(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

}  // namespace fbo
