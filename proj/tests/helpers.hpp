#pragma once

// Shared fixtures and small oracles for the unit and acceptance suites.

#include "dyncov/dyncov.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace testing {

using dyncov::Index;
using dyncov::Matrix;
using dyncov::Vector;

constexpr double kPi = 3.14159265358979323846;

/// Spline weight rows with equally spaced knots and ordinates uniform in
/// [lo, hi]; tame counterpart of the random-knot generator, used by the
/// larger simulation fixtures where wild interpolation overshoot would
/// dominate every metric.
inline Matrix tame_spline_rows(Index n_components, Index n_times, int n_knots, double lo,
                               double hi, dyncov::Rng& rng) {
  Matrix a(n_components, n_times);
  std::vector<double> xs(static_cast<std::size_t>(n_knots));
  std::vector<double> ys(static_cast<std::size_t>(n_knots));
  for (int i = 0; i < n_knots; ++i) {
    xs[static_cast<std::size_t>(i)] =
        1.0 + (static_cast<double>(n_times) - 1.0) * i / (n_knots - 1);
  }
  for (Index k = 0; k < n_components; ++k) {
    for (double& y : ys) y = rng.uniform(lo, hi);
    const dyncov::detail::NaturalSpline spline(xs, ys);
    for (Index t = 0; t < n_times; ++t) {
      a(k, t) = std::max(spline(static_cast<double>(t + 1)), 0.0);
    }
  }
  return a;
}

/// Scales row k by a factor increasing in k so pooled eigenvalues separate.
inline void separate_amplitudes(Matrix& a, double lo = 0.35) {
  const Index k_total = a.rows();
  for (Index k = 0; k < k_total; ++k) {
    const double scale =
        lo + (1.0 - lo) * static_cast<double>(k) / std::max<Index>(k_total - 1, 1);
    a.row(k) *= scale;
  }
}

/// Weight rows sharing a common mean of 0.5: two sines, a
/// constant, and a ramp. The tied means leave the pooled covariance with
/// tied eigenvalues, so the spectral initializer starts mixed.
inline Matrix tied_mean_mixed_rows(Index n_times) {
  Matrix a(4, n_times);
  for (Index t = 0; t < n_times; ++t) {
    const double u = static_cast<double>(t) / static_cast<double>(n_times - 1);
    a(0, t) = 0.5 + 0.35 * std::sin(2.0 * kPi * u);
    a(1, t) = 0.5 + 0.35 * std::sin(4.0 * kPi * u + 0.7);
    a(2, t) = 0.5;
    a(3, t) = 0.15 + 0.7 * u;
  }
  return a;
}

inline double max_row_energy(const Matrix& a, const dyncov::TruncatedKernelBasis& basis,
                             double bias = 0.0) {
  double energy = 0.0;
  for (Index k = 0; k < a.rows(); ++k) {
    const Vector row = a.row(k).transpose().array() + bias;
    energy = std::max(energy, dyncov::ellipsoid_value(row, basis));
  }
  return energy;
}

inline double max_spectral_norm(const std::vector<Matrix>& covs) {
  double bound = 0.0;
  for (const Matrix& s : covs) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s, Eigen::EigenvaluesOnly);
    bound = std::max(bound, solver.eigenvalues().maxCoeff());
  }
  return bound;
}

struct LineFit {
  double slope = 0.0;
  double r_squared = 0.0;
};

inline LineFit fit_line(const std::vector<double>& ys) {
  LineFit out;
  const double n = static_cast<double>(ys.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += ys[i];
    sxx += x * x;
    sxy += x * ys[i];
    syy += ys[i] * ys[i];
  }
  const double cov = n * sxy - sx * sy;
  const double var_x = n * sxx - sx * sx;
  const double var_y = n * syy - sy * sy;
  out.slope = cov / var_x;
  out.r_squared = var_y > 0.0 ? cov * cov / (var_x * var_y) : 1.0;
  return out;
}

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline Matrix random_gaussian(Index rows, Index cols, dyncov::Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

inline Matrix random_orthogonal(Index n, dyncov::Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_gaussian(n, n, rng));
  return qr.householderQ() * Matrix::Identity(n, n);
}

inline Matrix random_spd(Index n, dyncov::Rng& rng, double ridge = 0.1) {
  const Matrix g = random_gaussian(n, n, rng);
  return g * g.transpose() / static_cast<double>(n) + ridge * Matrix::Identity(n, n);
}

}  // namespace testing
