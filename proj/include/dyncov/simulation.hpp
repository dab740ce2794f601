#pragma once

#include "dyncov/data.hpp"
#include "dyncov/projections.hpp"
#include "dyncov/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace dyncov {

enum class WaveformKind { spline, sine_mix, mixed, square };

inline std::string to_string(WaveformKind kind) {
  switch (kind) {
    case WaveformKind::spline: return "spline";
    case WaveformKind::sine_mix: return "sine_mix";
    case WaveformKind::mixed: return "mixed";
    case WaveformKind::square: return "square";
  }
  return "unknown";
}

inline WaveformKind waveform_from_string(const std::string& name) {
  if (name == "spline") return WaveformKind::spline;
  if (name == "sine_mix") return WaveformKind::sine_mix;
  if (name == "mixed") return WaveformKind::mixed;
  if (name == "square") return WaveformKind::square;
  throw InvalidParameterError("unknown waveform kind: " + name);
}

/// Sparse column-orthonormal matrix: per-block orthonormal factors of a
/// block-diagonal matrix (QR of standard Gaussian blocks, trailing block
/// shorter when block_size does not divide P), rows permuted uniformly,
/// K columns drawn without replacement. Column supports stay within one
/// block, so each has at most block_size nonzeros.
inline Matrix gen_sparse_orthonormal(Index n_vars, Index n_components, Index block_size,
                                     Rng& rng) {
  if (n_components > n_vars) {
    throw InvalidParameterError("gen_sparse_orthonormal: K must not exceed P");
  }
  if (block_size < 1) {
    throw InvalidParameterError("gen_sparse_orthonormal: block_size must be positive");
  }

  Matrix full = Matrix::Zero(n_vars, n_vars);
  for (Index start = 0; start < n_vars; start += block_size) {
    const Index m = std::min(block_size, n_vars - start);
    Matrix block(m, m);
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < m; ++j) block(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Matrix> qr(block);
    full.block(start, start, m, m) = qr.householderQ() * Matrix::Identity(m, m);
  }

  std::vector<Index> rows(static_cast<std::size_t>(n_vars));
  std::iota(rows.begin(), rows.end(), Index{0});
  rng.shuffle(rows);
  Matrix permuted(n_vars, n_vars);
  for (Index i = 0; i < n_vars; ++i) permuted.row(rows[static_cast<std::size_t>(i)]) = full.row(i);

  std::vector<Index> cols(static_cast<std::size_t>(n_vars));
  std::iota(cols.begin(), cols.end(), Index{0});
  rng.shuffle(cols);
  Matrix out(n_vars, n_components);
  for (Index k = 0; k < n_components; ++k) out.col(k) = permuted.col(cols[static_cast<std::size_t>(k)]);
  return out;
}

namespace detail {

/// Natural cubic spline through (x, y), linear beyond the outer knots.
class NaturalSpline {
 public:
  NaturalSpline(std::vector<double> x, std::vector<double> y)
      : x_(std::move(x)), y_(std::move(y)), second_(x_.size(), 0.0) {
    const std::size_t n = x_.size();
    if (n < 2) throw InvalidParameterError("NaturalSpline: need at least 2 knots");
    if (n == 2) return;

    // Tridiagonal system for the interior second derivatives, natural ends.
    std::vector<double> diag(n, 0.0), upper(n, 0.0), rhs(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h_lo = x_[i] - x_[i - 1];
      const double h_hi = x_[i + 1] - x_[i];
      diag[i] = (h_lo + h_hi) / 3.0;
      upper[i] = h_hi / 6.0;
      rhs[i] = (y_[i + 1] - y_[i]) / h_hi - (y_[i] - y_[i - 1]) / h_lo;
    }
    for (std::size_t i = 2; i + 1 < n; ++i) {
      const double w = (x_[i] - x_[i - 1]) / 6.0 / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      second_[i] = (rhs[i] - upper[i] * second_[i + 1]) / diag[i];
    }
  }

  double operator()(double t) const {
    const std::size_t n = x_.size();
    if (t <= x_.front()) {
      const double h = x_[1] - x_[0];
      const double slope = (y_[1] - y_[0]) / h - h * second_[1] / 6.0;
      return y_.front() + slope * (t - x_.front());
    }
    if (t >= x_.back()) {
      const double h = x_[n - 1] - x_[n - 2];
      const double slope = (y_[n - 1] - y_[n - 2]) / h + h * second_[n - 2] / 6.0;
      return y_.back() + slope * (t - x_.back());
    }
    std::size_t i = static_cast<std::size_t>(
        std::upper_bound(x_.begin(), x_.end(), t) - x_.begin() - 1);
    const double h = x_[i + 1] - x_[i];
    const double a = (x_[i + 1] - t) / h;
    const double b = (t - x_[i]) / h;
    return a * y_[i] + b * y_[i + 1] +
           ((a * a * a - a) * second_[i] + (b * b * b - b) * second_[i + 1]) * h * h / 6.0;
  }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  std::vector<double> second_;
};

inline Vector spline_row(Index n_times, int n_knots, double y_lo, double y_hi, Rng& rng) {
  std::vector<double> xs(static_cast<std::size_t>(n_knots));
  std::vector<double> ys(static_cast<std::size_t>(n_knots));
  for (;;) {
    for (double& x : xs) x = rng.uniform(1.0, static_cast<double>(n_times));
    std::sort(xs.begin(), xs.end());
    bool separated = true;
    for (std::size_t i = 1; i < xs.size(); ++i) {
      if (xs[i] - xs[i - 1] < 1e-6) separated = false;
    }
    if (separated) break;
  }
  for (double& y : ys) y = rng.uniform(y_lo, y_hi);
  const NaturalSpline spline(xs, ys);
  Vector row(n_times);
  for (Index t = 0; t < n_times; ++t) {
    row[t] = std::max(spline(static_cast<double>(t + 1)), 0.0);
  }
  return row;
}

}  // namespace detail

/// Nonnegative temporal weight rows. The spline kind interpolates n_knots
/// random knots (x uniform on [1, J], y uniform on [knot_lo, knot_hi],
/// default [0, 1]) with a natural cubic spline, clipped at zero. The named
/// kinds are deterministic: "mixed" cycles sine / constant / ramp /
/// second-sine rows, "sine_mix" uses sines of increasing frequency, and
/// "square" switches between the levels 0.2 and 0.9 with per-row phase
/// offsets. All rows land in [0, 1] except splines, which may overshoot
/// their knot range slightly.
inline Matrix gen_smooth_weights(Index n_components, Index n_times, WaveformKind kind,
                                 int n_knots, Rng& rng, double knot_lo = 0.0,
                                 double knot_hi = 1.0) {
  constexpr double two_pi = 6.283185307179586476925287;
  if (!(knot_lo >= 0.0) || !(knot_hi > knot_lo)) {
    throw InvalidParameterError("gen_smooth_weights: need 0 <= knot_lo < knot_hi");
  }
  Matrix a(n_components, n_times);
  switch (kind) {
    case WaveformKind::spline: {
      if (n_knots < 2) {
        throw InvalidParameterError("gen_smooth_weights: spline needs n_knots >= 2");
      }
      for (Index k = 0; k < n_components; ++k) {
        a.row(k) = detail::spline_row(n_times, n_knots, knot_lo, knot_hi, rng).transpose();
      }
      return a;
    }
    case WaveformKind::mixed: {
      const double span = static_cast<double>(std::max<Index>(n_times - 1, 1));
      for (Index k = 0; k < n_components; ++k) {
        const double scale = std::pow(0.85, static_cast<double>(k / 4));
        for (Index t = 0; t < n_times; ++t) {
          const double u = static_cast<double>(t) / span;
          double value = 0.0;
          switch (k % 4) {
            case 0: value = 0.45 + 0.40 * std::sin(two_pi * u); break;
            case 1: value = 0.70; break;
            case 2: value = 0.10 + 0.85 * u; break;
            case 3: value = 0.60 + 0.30 * std::sin(2.0 * two_pi * u + two_pi / 4.0); break;
          }
          a(k, t) = std::clamp(scale * value, 0.0, 1.0);
        }
      }
      return a;
    }
    case WaveformKind::sine_mix: {
      const double span = static_cast<double>(std::max<Index>(n_times - 1, 1));
      for (Index k = 0; k < n_components; ++k) {
        const double freq = 1.0 + 0.5 * static_cast<double>(k);
        const double offset = 0.45 + 0.04 * static_cast<double>(k);
        const double amp = 0.35 * std::pow(0.9, static_cast<double>(k));
        const double phase = two_pi * static_cast<double>(k) / 6.0;
        for (Index t = 0; t < n_times; ++t) {
          const double u = static_cast<double>(t) / span;
          a(k, t) = std::clamp(offset + amp * std::sin(two_pi * freq * u + phase), 0.0, 1.0);
        }
      }
      return a;
    }
    case WaveformKind::square: {
      const double period = static_cast<double>(n_times) / 2.0;
      for (Index k = 0; k < n_components; ++k) {
        const double offset =
            period * static_cast<double>(k) / (2.0 * static_cast<double>(n_components));
        for (Index t = 0; t < n_times; ++t) {
          const double phase = std::fmod(static_cast<double>(t) + offset, period);
          a(k, t) = phase < 0.5 * period ? 0.9 : 0.2;
        }
      }
      return a;
    }
  }
  throw InvalidParameterError("gen_smooth_weights: unknown waveform kind");
}

/// Ground truth (Vstar, Astar) plus the generator settings that produced it.
/// gamma_star records the largest row smoothness energy of Astar under the
/// kernel basis used at generation time, so feasible fits take gamma >=
/// gamma_star.
struct GroundTruth {
  Matrix vstar;
  Matrix astar;
  double sigma = 0.0;
  WaveformKind waveform = WaveformKind::spline;
  int n_knots = 0;
  Index block_size = 0;
  std::uint64_t seed = 0;
  double gamma_star = 0.0;

  Index vars() const { return vstar.rows(); }
  Index components() const { return vstar.cols(); }
  Index times() const { return astar.cols(); }

  Index sparsity() const {
    Index widest = 0;
    for (Index k = 0; k < vstar.cols(); ++k) {
      Index count = 0;
      for (Index i = 0; i < vstar.rows(); ++i) {
        if (vstar(i, k) != 0.0) ++count;
      }
      widest = std::max(widest, count);
    }
    return widest;
  }

  double box_bound() const { return astar.maxCoeff(); }

  FactorEstimate as_estimate() const { return {vstar, astar}; }
};

inline GroundTruth make_ground_truth(Index n_vars, Index n_components, Index n_times,
                                     Index block_size, WaveformKind kind, int n_knots,
                                     double sigma, const TruncatedKernelBasis& basis,
                                     std::uint64_t seed, double knot_lo = 0.0,
                                     double knot_hi = 1.0) {
  if (basis.size() != n_times) {
    throw InvalidParameterError("make_ground_truth: kernel basis size must equal J");
  }
  if (sigma < 0.0) {
    throw InvalidParameterError("make_ground_truth: sigma must be nonnegative");
  }
  Rng rng(seed);
  GroundTruth truth;
  truth.vstar = gen_sparse_orthonormal(n_vars, n_components, block_size, rng);
  truth.astar = gen_smooth_weights(n_components, n_times, kind, n_knots, rng, knot_lo, knot_hi);
  truth.sigma = sigma;
  truth.waveform = kind;
  truth.n_knots = n_knots;
  truth.block_size = block_size;
  truth.seed = seed;
  for (Index k = 0; k < n_components; ++k) {
    truth.gamma_star =
        std::max(truth.gamma_star, ellipsoid_value(truth.astar.row(k).transpose(), basis));
  }
  return truth;
}

/// Draws x_j^(n) ~ N(0, Sigma*_j + sigma I) as Vstar diag(a_j)^{1/2} g_K +
/// sqrt(sigma) g_P, filling subjects in order and time within subject.
inline SampleSet sample_gaussian(const GroundTruth& truth, Index n_subjects, Rng& rng) {
  const Index n_vars = truth.vars();
  const Index n_comp = truth.components();
  const Index n_times = truth.times();
  const double noise_sd = std::sqrt(truth.sigma);

  SampleSet samples(n_subjects, n_times, n_vars);
  std::vector<double>& data = samples.mutable_data();
  Vector g_low(n_comp);
  Vector x(n_vars);
  Matrix root = truth.astar.cwiseMax(0.0).cwiseSqrt();  // K x J
  std::size_t cursor = 0;
  for (Index n = 0; n < n_subjects; ++n) {
    for (Index j = 0; j < n_times; ++j) {
      for (Index k = 0; k < n_comp; ++k) g_low[k] = rng.normal();
      x.noalias() = truth.vstar * (root.col(j).asDiagonal() * g_low);
      if (noise_sd > 0.0) {
        for (Index p = 0; p < n_vars; ++p) x[p] += noise_sd * rng.normal();
      }
      for (Index p = 0; p < n_vars; ++p) data[cursor++] = x[p];
    }
  }
  return samples;
}

struct TaskScore {
  std::vector<double> scores;
  std::size_t predicted = 0;
};

/// Block classification score: for each task,
/// score = sum_i ||x_i x_i^T - Sigma_{task,i}||_F^2 over the block, and the
/// predicted label is the argmin (ties to the first task in order).
inline TaskScore block_task_score(const std::vector<Vector>& block,
                                  const std::vector<std::vector<Matrix>>& task_covs) {
  if (block.empty() || task_covs.empty()) {
    throw InvalidParameterError("block_task_score: empty block or task list");
  }
  for (const auto& covs : task_covs) {
    if (covs.size() != block.size()) {
      throw InvalidParameterError(
          "block_task_score: block length does not match covariance count");
    }
  }
  TaskScore out;
  out.scores.reserve(task_covs.size());
  for (const auto& covs : task_covs) {
    double score = 0.0;
    for (std::size_t i = 0; i < block.size(); ++i) {
      score += (block[i] * block[i].transpose() - covs[i]).squaredNorm();
    }
    out.scores.push_back(score);
  }
  for (std::size_t t = 1; t < out.scores.size(); ++t) {
    if (out.scores[t] < out.scores[out.predicted]) out.predicted = t;
  }
  return out;
}

}  // namespace dyncov
