#pragma once

#include "dyncov/kernels.hpp"
#include "dyncov/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace dyncov {

/// Keeps the s entries of largest magnitude (ties broken towards the lower
/// index), zeroes the rest, and rescales to the unit sphere.
inline Vector project_sparse_unit(const Vector& v, Index s) {
  const Index p = v.size();
  if (s < 1 || s > p) {
    throw InvalidParameterError("project_sparse_unit: require 1 <= s <= P");
  }
  std::vector<Index> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double ma = std::abs(v[a]);
    const double mb = std::abs(v[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });

  Vector kept = Vector::Zero(p);
  for (Index i = 0; i < s; ++i) kept[order[static_cast<std::size_t>(i)]] = v[order[static_cast<std::size_t>(i)]];
  const double norm = kept.norm();
  if (norm == 0.0) {
    throw ZeroVectorError("project_sparse_unit: vector is zero after thresholding");
  }
  return kept / norm;
}

/// Entrywise clamp to the box [0, c].
inline Vector project_box(const Vector& a, double c) {
  if (!(c > 0.0)) {
    throw InvalidParameterError("project_box: c must be positive");
  }
  return a.cwiseMax(0.0).cwiseMin(c);
}

/// Smoothness energy a^T Gtilde^dagger a of a temporal row.
inline double ellipsoid_value(const Vector& a, const TruncatedKernelBasis& basis) {
  const Vector u = basis.q.transpose() * a;
  return u.cwiseAbs2().dot(basis.lambda);
}

namespace detail {

/// Secular function h(x) = sum_i lambda_i u_i^2 / (1 + x lambda_i)^2 - gamma,
/// strictly decreasing on x >= 0.
inline double secular(const Vector& lambda, const Vector& u_sq, double x, double gamma) {
  double value = 0.0;
  for (Index i = 0; i < lambda.size(); ++i) {
    const double denom = 1.0 + x * lambda[i];
    value += lambda[i] * u_sq[i] / (denom * denom);
  }
  return value - gamma;
}

inline double secular_derivative(const Vector& lambda, const Vector& u_sq, double x) {
  double value = 0.0;
  for (Index i = 0; i < lambda.size(); ++i) {
    const double denom = 1.0 + x * lambda[i];
    value -= 2.0 * lambda[i] * lambda[i] * u_sq[i] / (denom * denom * denom);
  }
  return value;
}

/// Solves h(x) = 0 on x >= 0 by bisection safeguarded Newton. Assumes
/// h(0) > 0; the returned multiplier satisfies |h| <= 1e-12 * gamma or is
/// the feasible end of the final bracket.
inline double solve_secular(const Vector& lambda, const Vector& u_sq, double gamma) {
  double lo = 0.0;
  double hi = 1.0;
  int grow = 0;
  while (secular(lambda, u_sq, hi, gamma) > 0.0 && grow < 200) {
    lo = hi;
    hi *= 2.0;
    ++grow;
  }

  double x = 0.5 * (lo + hi);
  double best_feasible = hi;
  const double tol = 1e-12 * gamma;
  for (int iter = 0; iter < 200; ++iter) {
    const double h = secular(lambda, u_sq, x, gamma);
    if (std::abs(h) <= tol) return x;
    if (h > 0.0) {
      lo = x;
    } else {
      hi = x;
      best_feasible = std::min(best_feasible, x);
    }
    const double dh = secular_derivative(lambda, u_sq, x);
    double next = x - h / dh;
    if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo <= 1e-16 * (1.0 + hi)) break;
    x = next;
  }
  // Prefer the feasible side when the tolerance was not met exactly.
  return secular(lambda, u_sq, x, gamma) <= 0.0 ? x : best_feasible;
}

struct EllipsoidProjection {
  Vector value;
  bool constraint_active = false;  // multiplier path taken
  bool used_fallback = false;      // exact secular solve instead of the quadratic
  double multiplier = 0.0;
};

inline EllipsoidProjection project_ellipsoid_info(const Vector& a,
                                                  const TruncatedKernelBasis& basis,
                                                  double gamma) {
  if (!(gamma > 0.0)) {
    throw InvalidParameterError("project_ellipsoid: gamma must be positive");
  }
  if (basis.rank() == 0) {
    throw DegenerateKernelError("project_ellipsoid: kernel basis has rank zero");
  }
  const Vector u = basis.q.transpose() * a;
  const Vector u_sq = u.cwiseAbs2();
  const Vector& lambda = basis.lambda;

  EllipsoidProjection out;
  if (u_sq.dot(lambda) <= gamma) {
    out.value = basis.q * u;
    return out;
  }
  out.constraint_active = true;

  // The KKT multiplier solves sum_i lambda_i u_i^2 / (1 + x lambda_i)^2 = gamma.
  // First try the second-order Taylor surrogate
  //   3 x^2 sum(l^3 u^2) - 2 x sum(l^2 u^2) + sum(l u^2) - gamma = 0
  // and keep its root only when it reproduces the constraint boundary; the
  // surrogate can lack nonnegative real roots or land far inside the set,
  // in which case the exact secular equation is solved instead.
  const double c2 = 3.0 * (lambda.array().cube() * u_sq.array()).sum();
  const double c1 = -2.0 * (lambda.array().square() * u_sq.array()).sum();
  const double c0 = u_sq.dot(lambda) - gamma;

  double multiplier = -1.0;
  const double disc = c1 * c1 - 4.0 * c2 * c0;
  if (disc >= 0.0) {
    const double sq = std::sqrt(disc);
    double best_gap = std::numeric_limits<double>::infinity();
    for (const double root : {(-c1 - sq) / (2.0 * c2), (-c1 + sq) / (2.0 * c2)}) {
      if (!(root >= 0.0)) continue;
      const double gap = std::abs(secular(lambda, u_sq, root, gamma));
      if (gap < best_gap) {
        best_gap = gap;
        multiplier = root;
      }
    }
    if (!(best_gap <= 1e-6 * gamma)) multiplier = -1.0;
  }
  if (multiplier < 0.0) {
    out.used_fallback = true;
    multiplier = solve_secular(lambda, u_sq, gamma);
  }

  out.multiplier = multiplier;
  Vector shrunk(u.size());
  for (Index i = 0; i < u.size(); ++i) shrunk[i] = u[i] / (1.0 + multiplier * lambda[i]);
  out.value = basis.q * shrunk;
  return out;
}

}  // namespace detail

/// Projection onto the kernel ellipsoid {a in range(Q): a^T Gtilde^dagger a <= gamma}.
inline Vector project_ellipsoid(const Vector& a, const TruncatedKernelBasis& basis,
                                double gamma) {
  return detail::project_ellipsoid_info(a, basis, gamma).value;
}

struct TemporalProjection {
  Vector value;
  bool feasible = false;
  int iterations = 0;
};

namespace detail {

inline double box_violation(const Vector& a, double c) {
  const double below = a.size() ? -a.minCoeff() : 0.0;
  const double above = a.size() ? a.maxCoeff() - c : 0.0;
  return std::max({0.0, below, above});
}

inline bool temporal_row_feasible(const Vector& a, double c, double gamma,
                                  const TruncatedKernelBasis& basis, double tol) {
  if (box_violation(a, c) > tol * c) return false;
  if (ellipsoid_value(a, basis) > gamma * (1.0 + tol)) return false;
  const double residual = (a - basis.q * (basis.q.transpose() * a)).norm();
  return residual <= tol * std::max(a.norm(), 1.0);
}

}  // namespace detail

/// Alternating projection onto the box [0,c]^J and the kernel ellipsoid.
/// Stops as soon as both constraints hold within tol or after max_alt_iter
/// rounds; the feasible flag reports which case occurred.
inline TemporalProjection project_temporal_row(const Vector& a, double c, double gamma,
                                               const TruncatedKernelBasis& basis,
                                               int max_alt_iter = 100,
                                               double tol = 1e-8) {
  if (!(c > 0.0) || !(gamma > 0.0)) {
    throw InvalidParameterError("project_temporal_row: c and gamma must be positive");
  }
  if (basis.rank() == 0) {
    throw DegenerateKernelError("project_temporal_row: kernel basis has rank zero");
  }
  TemporalProjection out;
  out.value = a;
  while (out.iterations < max_alt_iter &&
         !detail::temporal_row_feasible(out.value, c, gamma, basis, tol)) {
    out.value = project_ellipsoid(project_box(out.value, c), basis, gamma);
    ++out.iterations;
  }
  out.feasible = detail::temporal_row_feasible(out.value, c, gamma, basis, tol);
  return out;
}

struct QRFactors {
  Matrix orthonormal;  // P x K, same column span as the input
  Matrix triangular;   // K x K upper triangular with positive diagonal
};

/// Thin QR factorization V = B L with positive diagonal convention on L.
inline QRFactors orthonormalize(const Matrix& v) {
  const Index cols = v.cols();
  if (v.rows() < cols) {
    throw InvalidParameterError("orthonormalize: matrix has more columns than rows");
  }
  Eigen::JacobiSVD<Matrix> svd(v);
  if (svd.singularValues()[cols - 1] <= 1e-10) {
    throw RankDeficiencyError("orthonormalize: matrix is rank deficient");
  }
  Eigen::HouseholderQR<Matrix> qr(v);
  QRFactors out;
  out.orthonormal = qr.householderQ() * Matrix::Identity(v.rows(), cols);
  out.triangular =
      qr.matrixQR().topRows(cols).template triangularView<Eigen::Upper>();
  for (Index k = 0; k < cols; ++k) {
    if (out.triangular(k, k) < 0.0) {
      out.triangular.row(k) = -out.triangular.row(k);
      out.orthonormal.col(k) = -out.orthonormal.col(k);
    }
  }
  return out;
}

}  // namespace dyncov
