#pragma once

#include "dyncov/data.hpp"
#include "dyncov/types.hpp"

#include <cmath>
#include <vector>

namespace dyncov {

/// Orthogonal Procrustes solution R = argmin_{Y in O(K)} ||V - Vstar Y||_F,
/// computed as U W^T from the SVD Vstar^T V = U D W^T. Reflections are
/// allowed; any SVD-consistent rotation is returned when D is degenerate.
inline Matrix optimal_rotation(const Matrix& v, const Matrix& vstar) {
  if (v.rows() != vstar.rows() || v.cols() != vstar.cols()) {
    throw InvalidParameterError("optimal_rotation: shape mismatch");
  }
  const Matrix cross = vstar.transpose() * v;
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Rotation-aligned squared distance between parameter pairs:
/// sum_j ||V - Vstar R||_F^2 + ||diag(a_j) - R^T diag(astar_j) R||_F^2
/// with R fitted once from the spatial factors.
inline double dist_squared(const FactorEstimate& z, const FactorEstimate& zstar) {
  if (z.vars() != zstar.vars() || z.components() != zstar.components() ||
      z.times() != zstar.times()) {
    throw InvalidParameterError("dist_squared: shape mismatch");
  }
  const Matrix rot = optimal_rotation(z.v, zstar.v);
  const double spatial = (z.v - zstar.v * rot).squaredNorm();
  const Index n_times = z.times();

  double temporal = 0.0;
  Matrix aligned(z.components(), z.components());
  for (Index j = 0; j < n_times; ++j) {
    aligned.noalias() = rot.transpose() * zstar.a.col(j).asDiagonal() * rot;
    aligned.diagonal() -= z.a.col(j);
    temporal += aligned.squaredNorm();
  }
  return static_cast<double>(n_times) * spatial + temporal;
}

/// Covariance sequence Sigma_j = V diag(a_j) V^T.
inline std::vector<Matrix> covariances_from(const FactorEstimate& z) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(z.times()));
  for (Index j = 0; j < z.times(); ++j) {
    out.emplace_back(z.v * z.a.col(j).asDiagonal() * z.v.transpose());
  }
  return out;
}

/// Matrix logarithm restricted to the eigenpairs with |eigenvalue| >= floor.
inline Matrix log_spd_truncated(const Matrix& s, double eig_floor = 1e-5) {
  const detail::SymmetricEigen eig = detail::sym_eig_desc(s);
  Matrix out = Matrix::Zero(s.rows(), s.cols());
  for (Index i = 0; i < eig.values.size(); ++i) {
    const double value = eig.values[i];
    if (std::abs(value) < eig_floor) continue;
    if (value < 0.0) {
      throw InvalidParameterError(
          "log_spd_truncated: matrix has a retained negative eigenvalue");
    }
    out.selfadjointView<Eigen::Lower>().rankUpdate(eig.vectors.col(i), std::log(value));
  }
  return out.selfadjointView<Eigen::Lower>();
}

/// Average log-Euclidean distance J^{-1} sum_j ||log Sigma_j - log Sigmastar_j||_F
/// with eigenvalues below the floor truncated before taking logs.
inline double avg_log_euclidean(const std::vector<Matrix>& a,
                                const std::vector<Matrix>& b,
                                double eig_floor = 1e-5) {
  if (a.size() != b.size() || a.empty()) {
    throw InvalidParameterError("avg_log_euclidean: sequence length mismatch");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    total += (log_spd_truncated(a[j], eig_floor) - log_spd_truncated(b[j], eig_floor))
                 .norm();
  }
  return total / static_cast<double>(a.size());
}

}  // namespace dyncov
