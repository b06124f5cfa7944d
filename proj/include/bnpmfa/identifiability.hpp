#pragma once

// Collapsed partition score under a normal kernel with a conjugate mean
// prior and Jeffreys covariance prior, and a numerical check that pairwise
// score differences between partitions do not change when the latent
// matrix is transformed by a nonsingular M.

#include "bnpmfa/core.hpp"

#include <Eigen/LU>

#include <cmath>
#include <vector>

namespace bnpmfa {

/// Which coefficient multiplies ybar_h ybar_h' in the pooled scatter.
///
/// `Printed` uses (n_h^2 + 2 n_h tau - n_h - tau) / (n_h + tau).
/// `Integrated` uses n_h tau / (n_h + tau), which is what integrating the
/// mean out of the normal likelihood actually produces. Both forms transform
/// the same way under y -> M y, so the invariance check holds for either.
enum class ScatterCoefficient { Printed, Integrated };

struct CollapsedScoreInput {
  Matrix Y0;  ///< q x n
  PartitionState partition;
  double tau = 1.0;
};

inline double scatter_coefficient(double n_h, double tau, ScatterCoefficient form) {
  if (form == ScatterCoefficient::Integrated) return n_h * tau / (n_h + tau);
  return (n_h * n_h + 2.0 * n_h * tau - n_h - tau) / (n_h + tau);
}

/// Pooled matrix sum_h [S_h + coef(n_h) ybar_h ybar_h'].
inline Matrix pooled_scatter(const CollapsedScoreInput& in, ScatterCoefficient form) {
  const auto q = in.Y0.rows();
  const int H = in.partition.clusters();
  Matrix sums = Matrix::Zero(q, H);
  for (std::size_t i = 0; i < in.partition.size(); ++i) sums.col(in.partition.z[i]) += in.Y0.col(static_cast<Eigen::Index>(i));
  Matrix means(q, H);
  for (int h = 0; h < H; ++h) means.col(h) = sums.col(h) / in.partition.counts[static_cast<std::size_t>(h)];

  Matrix total = Matrix::Zero(q, q);
  for (std::size_t i = 0; i < in.partition.size(); ++i) {
    Vector d = in.Y0.col(static_cast<Eigen::Index>(i)) - means.col(in.partition.z[i]);
    total += d * d.transpose();
  }
  for (int h = 0; h < H; ++h) {
    const double nh = in.partition.counts[static_cast<std::size_t>(h)];
    total += scatter_coefficient(nh, in.tau, form) * means.col(h) * means.col(h).transpose();
  }
  return 0.5 * (total + total.transpose());
}

/// log f_tau = (q/2) sum_h log(tau / (tau + n_h)) - (n/2) log det(pooled),
/// up to a constant that does not depend on the partition.
inline double log_f_tau(const CollapsedScoreInput& in, ScatterCoefficient form = ScatterCoefficient::Printed) {
  const auto q = in.Y0.rows();
  const auto n = in.Y0.cols();
  if (!(in.tau > 0)) throw ConfigError("log_f_tau: tau must be > 0");
  if (q >= n) throw ConfigError("log_f_tau: need q < n");
  if (static_cast<Eigen::Index>(in.partition.size()) != n) throw ConfigError("log_f_tau: partition size differs from n");

  Eigen::LLT<Matrix> llt(pooled_scatter(in, form));
  if (llt.info() != Eigen::Success) throw NumericalError("log_f_tau: pooled scatter is not positive definite");
  const double log_det = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();

  double v = 0.0;
  for (int nh : in.partition.counts) v += 0.5 * static_cast<double>(q) * std::log(in.tau / (in.tau + nh));
  return v - 0.5 * static_cast<double>(n) * log_det;
}

/// max over partition pairs of |[f(A; MY) - f(B; MY)] - [f(A; Y) - f(B; Y)]|
/// in log space.
inline double invariance_check(const Matrix& Y0, const Matrix& M, const std::vector<PartitionState>& partitions,
                               double tau, ScatterCoefficient form = ScatterCoefficient::Printed) {
  if (M.rows() != M.cols() || M.rows() != Y0.rows()) throw ConfigError("invariance_check: M must be q x q");
  if (std::abs(M.determinant()) <= 1e-10) throw ConfigError("invariance_check: M is numerically singular");
  const Matrix Y1 = M * Y0;
  std::vector<double> base, moved;
  for (const auto& p : partitions) {
    base.push_back(log_f_tau({Y0, p, tau}, form));
    moved.push_back(log_f_tau({Y1, p, tau}, form));
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < partitions.size(); ++a)
    for (std::size_t b = a + 1; b < partitions.size(); ++b)
      worst = std::max(worst, std::abs((moved[a] - moved[b]) - (base[a] - base[b])));
  return worst;
}

}  // namespace bnpmfa
