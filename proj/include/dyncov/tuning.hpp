#pragma once

#include "dyncov/data.hpp"
#include "dyncov/estimation.hpp"
#include "dyncov/types.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace dyncov {

/// Search space for the two-stage hyperparameter selection. The ridge is
/// relative: the absolute regularizer is ridge * (mean variable variance),
/// making the likelihood of the rank-K model well defined when K < P.
struct TuningGrid {
  std::vector<Index> s_values;
  std::vector<Index> k_values;
  std::vector<double> gamma_values;
  std::vector<double> l_values;
  int folds = 5;
  double ridge = 1e-3;
  bool stage1_sweep_gamma_l = false;
};

/// Gaussian log-likelihood of the samples under N(0, V diag(a_j) V^T + ridge I),
/// accumulated over subjects and time points. Only the K eigenvalues of the
/// low-rank part shift away from the ridge, so the log-determinant and the
/// quadratic form are evaluated through a K x K eigenproblem per time point.
inline double gaussian_loglik(const FactorEstimate& z, const SampleSet& samples,
                              double ridge) {
  if (!(ridge > 0.0)) {
    throw InvalidParameterError("gaussian_loglik: ridge must be positive");
  }
  if (z.vars() != samples.vars() || z.times() != samples.times()) {
    throw InvalidParameterError("gaussian_loglik: estimate and samples disagree");
  }
  constexpr double log_two_pi = 1.8378770664093454835607;
  const Index n_vars = z.vars();
  const Index n_comp = z.components();
  const Index n_times = z.times();
  const Index n_subjects = samples.subjects();

  // Thin QR of V so the low-rank part becomes B (L diag(a_j) L^T) B^T.
  Eigen::HouseholderQR<Matrix> qr(z.v);
  const Matrix b = qr.householderQ() * Matrix::Identity(n_vars, n_comp);
  const Matrix l = qr.matrixQR().topRows(n_comp).triangularView<Eigen::Upper>();

  double loglik = 0.0;
  for (Index j = 0; j < n_times; ++j) {
    const Matrix core = l * z.a.col(j).asDiagonal() * l.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> solver(core);
    const Vector mu = solver.eigenvalues();
    const Matrix basis = b * solver.eigenvectors();  // P x K, orthonormal

    double logdet = static_cast<double>(n_vars - n_comp) * std::log(ridge);
    for (Index i = 0; i < n_comp; ++i) {
      const double shifted = mu[i] + ridge;
      if (!(shifted > 0.0)) {
        throw InvalidParameterError(
            "gaussian_loglik: model covariance is not positive definite");
      }
      logdet += std::log(shifted);
    }

    for (Index n = 0; n < n_subjects; ++n) {
      const auto x = samples.observation(n, j);
      const Vector y = basis.transpose() * x;
      double quad = x.squaredNorm() / ridge;
      for (Index i = 0; i < n_comp; ++i) {
        quad += (1.0 / (mu[i] + ridge) - 1.0 / ridge) * y[i] * y[i];
      }
      loglik -= 0.5 * (static_cast<double>(n_vars) * log_two_pi + logdet + quad);
    }
  }
  return loglik;
}

inline Index support_size(const Matrix& v) {
  Index count = 0;
  for (Index k = 0; k < v.cols(); ++k) {
    for (Index i = 0; i < v.rows(); ++i) {
      if (v(i, k) != 0.0) ++count;
    }
  }
  return count;
}

inline double bic_from(double loglik, Index support, double n_subjects) {
  return std::log(n_subjects) * static_cast<double>(support) - 2.0 * loglik;
}

/// BIC = log(N) sum_k ||v_k||_0 - 2 * gaussian log-likelihood.
inline double bic(const FactorEstimate& z, const SampleSet& samples, double ridge) {
  return bic_from(gaussian_loglik(z, samples, ridge), support_size(z.v),
                  static_cast<double>(samples.subjects()));
}

struct TuningCell {
  Index sparsity = 0;
  Index n_components = 0;
  double gamma = 0.0;
  double length_scale = 0.0;
  double score = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
};

struct TuningResult {
  Index sparsity = 0;
  Index n_components = 0;
  double gamma = 0.0;
  double length_scale = 0.0;
  std::vector<TuningCell> stage1;  // score = BIC, minimized
  std::vector<TuningCell> stage2;  // score = mean held-out log-likelihood, maximized
  double ridge_abs = 0.0;
};

namespace detail {

// Tie order shared by both stages: smaller s, smaller K, larger l, smaller gamma.
inline bool tie_before(const TuningCell& a, const TuningCell& b) {
  if (a.sparsity != b.sparsity) return a.sparsity < b.sparsity;
  if (a.n_components != b.n_components) return a.n_components < b.n_components;
  if (a.length_scale != b.length_scale) return a.length_scale > b.length_scale;
  return a.gamma < b.gamma;
}

inline const TuningCell* select_cell(const std::vector<TuningCell>& cells, bool minimize) {
  const TuningCell* best = nullptr;
  for (const TuningCell& cell : cells) {
    if (cell.failed || !std::isfinite(cell.score)) continue;
    if (best == nullptr) {
      best = &cell;
      continue;
    }
    if (cell.score != best->score) {
      const bool improves = minimize ? cell.score < best->score : cell.score > best->score;
      if (improves) best = &cell;
    } else if (tie_before(cell, *best)) {
      best = &cell;
    }
  }
  return best;
}

inline std::vector<std::vector<Index>> cv_folds(Index n_subjects, int folds,
                                                std::uint64_t seed) {
  std::vector<Index> order(static_cast<std::size_t>(n_subjects));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < order.size(); ++i) {
    out[i % static_cast<std::size_t>(folds)].push_back(order[i]);
  }
  return out;
}

}  // namespace detail

/// Two-stage selection: stage one minimizes BIC over (s, K) with gamma and
/// the length scale held at their grid midpoints (or swept when requested);
/// stage two fixes (s, K) and maximizes the mean held-out Gaussian
/// log-likelihood over (gamma, l) by cross-validation across subjects.
inline TuningResult tune(const SampleSet& samples, const TuningGrid& grid,
                         const ConstraintConfig& defaults, const FitOptions& opts = {}) {
  if (grid.s_values.empty() || grid.k_values.empty() || grid.gamma_values.empty() ||
      grid.l_values.empty()) {
    throw InvalidParameterError("tune: grid lists must be nonempty");
  }
  if (grid.folds < 2 || static_cast<Index>(grid.folds) > samples.subjects()) {
    throw InvalidParameterError("tune: require 2 <= folds <= N");
  }
  if (!(grid.ridge > 0.0)) {
    throw InvalidParameterError("tune: ridge must be positive");
  }

  TuningResult result;
  {
    const std::vector<Matrix>& covs = samples.covariances();
    double mean_variance = 0.0;
    for (const Matrix& s : covs) mean_variance += s.trace();
    mean_variance /= static_cast<double>(covs.size() * samples.vars());
    result.ridge_abs = grid.ridge * mean_variance;
  }

  const auto fit_cell = [&](const SampleSet& data, TuningCell& cell) -> FitResult {
    ConstraintConfig cfg = defaults;
    cfg.sparsity = cell.sparsity;
    cfg.n_components = cell.n_components;
    cfg.smoothness = cell.gamma;
    cfg.kernel.length_scale = cell.length_scale;
    try {
      return fit(data, cfg, opts);
    } catch (const std::exception&) {
      cell.failed = true;
      return {};
    }
  };

  // Stage 1: BIC over (s, K).
  const double gamma_mid = grid.gamma_values[(grid.gamma_values.size() - 1) / 2];
  const double l_mid = grid.l_values[(grid.l_values.size() - 1) / 2];
  std::vector<std::pair<double, double>> stage1_gl;
  if (grid.stage1_sweep_gamma_l) {
    for (double gamma : grid.gamma_values) {
      for (double l : grid.l_values) stage1_gl.emplace_back(gamma, l);
    }
  } else {
    stage1_gl.emplace_back(gamma_mid, l_mid);
  }

  for (Index s : grid.s_values) {
    for (Index k : grid.k_values) {
      for (const auto& [gamma, l] : stage1_gl) {
        TuningCell cell;
        cell.sparsity = s;
        cell.n_components = k;
        cell.gamma = gamma;
        cell.length_scale = l;
        const FitResult fitted = fit_cell(samples, cell);
        if (!cell.failed) {
          cell.score = bic(fitted.estimate, samples, result.ridge_abs);
        }
        result.stage1.push_back(cell);
      }
    }
  }
  const TuningCell* stage1_best = detail::select_cell(result.stage1, /*minimize=*/true);
  if (stage1_best == nullptr) {
    throw std::runtime_error("tune: every stage-1 cell failed");
  }
  result.sparsity = stage1_best->sparsity;
  result.n_components = stage1_best->n_components;

  // Stage 2: cross-validated log-likelihood over (gamma, l).
  const std::vector<std::vector<Index>> folds =
      detail::cv_folds(samples.subjects(), grid.folds, opts.rng_seed);
  std::vector<SampleSet> train_sets;
  std::vector<SampleSet> val_sets;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<Index> train;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g == f) continue;
      train.insert(train.end(), folds[g].begin(), folds[g].end());
    }
    train_sets.push_back(samples.select_subjects(train));
    val_sets.push_back(samples.select_subjects(folds[f]));
  }

  for (double gamma : grid.gamma_values) {
    for (double l : grid.l_values) {
      TuningCell cell;
      cell.sparsity = result.sparsity;
      cell.n_components = result.n_components;
      cell.gamma = gamma;
      cell.length_scale = l;
      double total = 0.0;
      for (std::size_t f = 0; f < folds.size() && !cell.failed; ++f) {
        const FitResult fitted = fit_cell(train_sets[f], cell);
        if (cell.failed) break;
        total += gaussian_loglik(fitted.estimate, val_sets[f], result.ridge_abs);
      }
      if (!cell.failed) {
        cell.score = total / static_cast<double>(folds.size());
      }
      result.stage2.push_back(cell);
    }
  }
  const TuningCell* stage2_best = detail::select_cell(result.stage2, /*minimize=*/false);
  if (stage2_best == nullptr) {
    throw std::runtime_error("tune: every stage-2 cell failed");
  }
  result.gamma = stage2_best->gamma;
  result.length_scale = stage2_best->length_scale;
  return result;
}

}  // namespace dyncov
