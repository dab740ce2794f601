#pragma once

#include "dyncov/data.hpp"
#include "dyncov/kernels.hpp"
#include "dyncov/metrics.hpp"
#include "dyncov/projections.hpp"
#include "dyncov/types.hpp"

#include <chrono>
#include <cmath>
#include <vector>

namespace dyncov {

namespace detail {

inline void check_shapes(const FactorEstimate& z, const std::vector<Matrix>& covs) {
  if (covs.empty()) {
    throw InvalidParameterError("estimation: empty covariance sequence");
  }
  if (z.times() != static_cast<Index>(covs.size()) || z.vars() != covs.front().rows()) {
    throw InvalidParameterError("estimation: estimate and covariances disagree");
  }
}

inline void check_finite(const std::vector<Matrix>& covs) {
  for (std::size_t j = 0; j < covs.size(); ++j) {
    if (!covs[j].allFinite()) {
      throw DivergenceError("fit: covariance " + std::to_string(j) + " is not finite", 0);
    }
  }
}

struct ObjectiveGradients {
  double value = 0.0;
  Matrix grad_v;  // P x K
  Matrix grad_a;  // K x J
};

/// One sweep over j computing the objective together with both gradients
/// of f_N(Z) = J^{-1} sum_j (1/2) ||S_j - V diag(a_j) V^T||_F^2:
///   grad_V = (2/J) sum_j (Sigma_j - S_j) V diag(a_j)
///   grad_A(k,j) = (1/J) v_k^T (Sigma_j - S_j) v_k
/// The j-sum runs in a fixed sequential order so results are reproducible.
inline ObjectiveGradients objective_gradients(const FactorEstimate& z,
                                              const std::vector<Matrix>& covs) {
  check_shapes(z, covs);
  const Index n_vars = z.vars();
  const Index n_comp = z.components();
  const Index n_times = z.times();
  const double inv_j = 1.0 / static_cast<double>(n_times);

  ObjectiveGradients out;
  out.grad_v = Matrix::Zero(n_vars, n_comp);
  out.grad_a = Matrix::Zero(n_comp, n_times);

  Matrix scaled(n_vars, n_comp);
  Matrix residual(n_vars, n_vars);
  Matrix residual_v(n_vars, n_comp);
  for (Index j = 0; j < n_times; ++j) {
    scaled.noalias() = z.v * z.a.col(j).asDiagonal();
    residual.noalias() = scaled * z.v.transpose();
    residual -= covs[static_cast<std::size_t>(j)];
    out.value += 0.5 * inv_j * residual.squaredNorm();
    residual_v.noalias() = residual * z.v;
    out.grad_v.noalias() += residual_v * z.a.col(j).asDiagonal();
    for (Index k = 0; k < n_comp; ++k) {
      out.grad_a(k, j) = inv_j * z.v.col(k).dot(residual_v.col(k));
    }
  }
  out.grad_v *= 2.0 * inv_j;
  return out;
}

}  // namespace detail

/// Value of the objective f_N at Z given per-time covariances.
inline double objective(const FactorEstimate& z, const std::vector<Matrix>& covs) {
  detail::check_shapes(z, covs);
  const double inv_j = 1.0 / static_cast<double>(covs.size());
  double value = 0.0;
  Matrix residual(z.vars(), z.vars());
  for (std::size_t j = 0; j < covs.size(); ++j) {
    residual.noalias() = z.v * z.a.col(static_cast<Index>(j)).asDiagonal() * z.v.transpose();
    residual -= covs[j];
    value += 0.5 * inv_j * residual.squaredNorm();
  }
  return value;
}

inline double objective(const FactorEstimate& z, const SampleSet& samples) {
  return objective(z, samples.covariances());
}

inline Matrix grad_v(const FactorEstimate& z, const std::vector<Matrix>& covs) {
  return detail::objective_gradients(z, covs).grad_v;
}

inline Matrix grad_a(const FactorEstimate& z, const std::vector<Matrix>& covs) {
  return detail::objective_gradients(z, covs).grad_a;
}

/// Spectral initialization: V0 holds the top-K eigenvectors of the pooled
/// covariance M_N = J^{-1} sum_j S_j (descending eigenvalues, signs fixed)
/// and A0(k,j) = v_k^T S_j v_k. No projection is applied here.
inline FactorEstimate spectral_init(const std::vector<Matrix>& covs, Index n_components) {
  if (covs.empty()) {
    throw InvalidParameterError("spectral_init: empty covariance sequence");
  }
  const Index n_vars = covs.front().rows();
  const Index n_times = static_cast<Index>(covs.size());
  if (n_components < 1 || n_components > std::min(n_vars, n_times)) {
    throw InvalidParameterError("spectral_init: require 1 <= K <= min(P, J)");
  }

  Matrix pooled = Matrix::Zero(n_vars, n_vars);
  for (const Matrix& s : covs) pooled += s;
  pooled /= static_cast<double>(n_times);

  const detail::SymmetricEigen eig = detail::sym_eig_desc(pooled);
  const double floor = std::max(eig.values[0], 0.0) * 1e-12;
  if (!(eig.values[n_components - 1] > floor)) {
    throw RankDeficiencyError(
        "spectral_init: pooled covariance has fewer than K positive eigenvalues");
  }

  FactorEstimate z;
  z.v = eig.vectors.leftCols(n_components);
  z.a.resize(n_components, n_times);
  for (Index j = 0; j < n_times; ++j) {
    for (Index k = 0; k < n_components; ++k) {
      z.a(k, j) = z.v.col(k).dot(covs[static_cast<std::size_t>(j)] * z.v.col(k));
    }
  }
  return z;
}

inline FactorEstimate spectral_init(const SampleSet& samples, Index n_components) {
  return spectral_init(samples.covariances(), n_components);
}

/// Step-size rule eta = multiplier * min_j sqrt(J) / (64 ||Z0_j||_2^2),
/// where Z0_j stacks (V^T, diag(a_j))^T.
inline double default_step_size(const FactorEstimate& z0, double multiplier = 1.0) {
  if (!(multiplier > 0.0)) {
    throw InvalidParameterError("default_step_size: multiplier must be positive");
  }
  const Index n_times = z0.times();
  const Matrix gram = z0.v.transpose() * z0.v;
  double max_sq_norm = 0.0;
  for (Index j = 0; j < n_times; ++j) {
    Matrix stacked = gram;
    stacked.diagonal() += z0.a.col(j).cwiseAbs2();
    Eigen::SelfAdjointEigenSolver<Matrix> solver(stacked, Eigen::EigenvaluesOnly);
    max_sq_norm = std::max(max_sq_norm, solver.eigenvalues().maxCoeff());
  }
  return multiplier * std::sqrt(static_cast<double>(n_times)) / (64.0 * max_sq_norm);
}

struct FitResult {
  FactorEstimate estimate;
  FitReport report;
};

namespace detail {

inline void validate(const FitOptions& opts) {
  if (!(opts.step_multiplier > 0.0) || opts.step_multiplier > 1.0) {
    throw InvalidParameterError("FitOptions: step_multiplier must lie in (0, 1]");
  }
  if (!(opts.epsilon_stop > 0.0)) {
    throw InvalidParameterError("FitOptions: epsilon_stop must be positive");
  }
  if (opts.max_iter < 1) {
    throw InvalidParameterError("FitOptions: max_iter must be at least 1");
  }
  if (opts.max_alt_iter < 1 || !(opts.proj_tol > 0.0)) {
    throw InvalidParameterError("FitOptions: invalid projection controls");
  }
}

inline void validate(const ConstraintConfig& cfg, Index n_vars, Index n_times) {
  if (cfg.n_components < 1 || cfg.n_components > std::min(n_vars, n_times)) {
    throw InvalidParameterError("ConstraintConfig: require 1 <= K <= min(P, J)");
  }
  if (cfg.sparsity < 1 || cfg.sparsity > n_vars) {
    throw InvalidParameterError("ConstraintConfig: require 1 <= s <= P");
  }
  if (!(cfg.box_bound > 0.0) || !(cfg.smoothness > 0.0) || !(cfg.delta_a > 0.0)) {
    throw InvalidParameterError("ConstraintConfig: c, gamma, delta_a must be positive");
  }
}

/// Column-wise hard-threshold projection; a column that vanishes under
/// thresholding keeps its previous value and is counted.
inline Matrix project_columns(const Matrix& updated, const Matrix& previous, Index sparsity,
                              int& zero_events) {
  Matrix out(updated.rows(), updated.cols());
  for (Index k = 0; k < updated.cols(); ++k) {
    try {
      out.col(k) = project_sparse_unit(updated.col(k), sparsity);
    } catch (const ZeroVectorError&) {
      out.col(k) = previous.col(k);
      ++zero_events;
    }
  }
  return out;
}

}  // namespace detail

/// Alternating projected gradient descent started from a given estimate.
/// Each iteration takes the A gradient step (step eta) with row-wise
/// projection onto the smooth box-ellipsoid set, then the V gradient step
/// (step eta/J) with column-wise hard-threshold projection; both gradients
/// are evaluated at the previous iterate. Stops when the objective change
/// falls below epsilon_stop * (1 + initial objective).
inline FitResult fit_from(const FactorEstimate& init, const std::vector<Matrix>& covs,
                          const ConstraintConfig& cfg, const FitOptions& opts = {},
                          const FactorEstimate* truth = nullptr) {
  detail::validate(opts);
  detail::check_shapes(init, covs);
  detail::validate(cfg, init.vars(), static_cast<Index>(covs.size()));
  if (init.components() != cfg.n_components) {
    throw InvalidParameterError("fit_from: estimate does not match configured K");
  }
  detail::check_finite(covs);

  const auto started = std::chrono::steady_clock::now();
  const Index n_times = static_cast<Index>(covs.size());
  const TruncatedKernelBasis basis =
      truncated_basis(build_kernel(cfg.kernel, n_times), cfg.delta_a);

  FitResult result;
  result.estimate = init;
  FitReport& report = result.report;
  report.step_size = default_step_size(init, opts.step_multiplier);

  const double f0 = objective(result.estimate, covs);
  if (!std::isfinite(f0)) {
    throw DivergenceError("fit: objective not finite at the initial point", 0);
  }
  report.objective_trace.push_back(f0);
  if (truth != nullptr) {
    report.dist_trace.push_back(dist_squared(result.estimate, *truth));
  }

  const double eta = report.step_size;
  const double stop_level = opts.epsilon_stop * (1.0 + f0);
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    const detail::ObjectiveGradients grads =
        detail::objective_gradients(result.estimate, covs);

    Matrix a_next = result.estimate.a - eta * grads.grad_a;
    for (Index k = 0; k < cfg.n_components; ++k) {
      TemporalProjection proj =
          project_temporal_row(a_next.row(k).transpose(), cfg.box_bound, cfg.smoothness,
                               basis, opts.max_alt_iter, opts.proj_tol);
      if (!proj.feasible) ++report.infeasible_row_events;
      a_next.row(k) = proj.value.transpose();
    }

    const Matrix v_step =
        result.estimate.v - (eta / static_cast<double>(n_times)) * grads.grad_v;
    Matrix v_next = detail::project_columns(v_step, result.estimate.v, cfg.sparsity,
                                            report.zero_column_events);
    if (opts.use_qr) v_next = orthonormalize(v_next).orthonormal;

    result.estimate.v = std::move(v_next);
    result.estimate.a = std::move(a_next);

    const double f = objective(result.estimate, covs);
    if (!std::isfinite(f)) {
      throw DivergenceError("fit: objective diverged at iteration " + std::to_string(iter),
                            iter);
    }
    report.objective_trace.push_back(f);
    if (truth != nullptr) {
      report.dist_trace.push_back(dist_squared(result.estimate, *truth));
    }
    report.iterations = iter;
    if (std::abs(f - report.objective_trace[static_cast<std::size_t>(iter) - 1]) <=
        stop_level) {
      break;
    }
  }

  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

/// Two-stage estimator: spectral initialization followed by alternating
/// projected gradient descent.
inline FitResult fit(const std::vector<Matrix>& covs, const ConstraintConfig& cfg,
                     const FitOptions& opts = {}, const FactorEstimate* truth = nullptr) {
  detail::check_finite(covs);
  return fit_from(spectral_init(covs, cfg.n_components), covs, cfg, opts, truth);
}

inline FitResult fit(const SampleSet& samples, const ConstraintConfig& cfg,
                     const FitOptions& opts = {}, const FactorEstimate* truth = nullptr) {
  return fit(samples.covariances(), cfg, opts, truth);
}

}  // namespace dyncov
