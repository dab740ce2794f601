#pragma once

#include "dyncov/kernels.hpp"
#include "dyncov/types.hpp"

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <utility>
#include <vector>

namespace dyncov {

/// Observation tensor of N subjects by J time points by P variables,
/// stored subject-major, then time, then variable. Per-time sample
/// covariances S_{N,j} = N^{-1} sum_n x_j^(n) x_j^(n)T are cached on
/// first use.
class SampleSet {
 public:
  SampleSet(Index n_subjects, Index n_times, Index n_vars)
      : n_subjects_(n_subjects), n_times_(n_times), n_vars_(n_vars) {
    if (n_subjects < 1 || n_times < 1 || n_vars < 1) {
      throw InvalidParameterError("SampleSet: all dimensions must be at least 1");
    }
    data_.assign(static_cast<std::size_t>(n_subjects * n_times * n_vars), 0.0);
  }

  SampleSet(const SampleSet& other)
      : n_subjects_(other.n_subjects_),
        n_times_(other.n_times_),
        n_vars_(other.n_vars_),
        data_(other.data_) {}

  SampleSet& operator=(const SampleSet& other) {
    if (this != &other) {
      n_subjects_ = other.n_subjects_;
      n_times_ = other.n_times_;
      n_vars_ = other.n_vars_;
      data_ = other.data_;
      std::lock_guard<std::mutex> lock(cache_mutex_);
      covariances_.clear();
    }
    return *this;
  }

  SampleSet(SampleSet&& other) noexcept
      : n_subjects_(other.n_subjects_),
        n_times_(other.n_times_),
        n_vars_(other.n_vars_),
        data_(std::move(other.data_)),
        covariances_(std::move(other.covariances_)) {}

  SampleSet& operator=(SampleSet&& other) noexcept {
    if (this != &other) {
      n_subjects_ = other.n_subjects_;
      n_times_ = other.n_times_;
      n_vars_ = other.n_vars_;
      data_ = std::move(other.data_);
      std::lock_guard<std::mutex> lock(cache_mutex_);
      covariances_ = std::move(other.covariances_);
    }
    return *this;
  }

  Index subjects() const { return n_subjects_; }
  Index times() const { return n_times_; }
  Index vars() const { return n_vars_; }

  double at(Index n, Index j, Index p) const { return data_[offset(n, j, p)]; }

  void set(Index n, Index j, Index p, double value) {
    data_[offset(n, j, p)] = value;
    invalidate();
  }

  Eigen::Map<const Vector> observation(Index n, Index j) const {
    return Eigen::Map<const Vector>(data_.data() + offset(n, j, 0), n_vars_);
  }

  /// Raw subject-major buffer; writing through it invalidates the cache.
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& mutable_data() {
    invalidate();
    return data_;
  }

  const std::vector<Matrix>& covariances() const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (covariances_.empty()) {
      covariances_.reserve(static_cast<std::size_t>(n_times_));
      for (Index j = 0; j < n_times_; ++j) {
        Matrix s = Matrix::Zero(n_vars_, n_vars_);
        for (Index n = 0; n < n_subjects_; ++n) {
          const auto x = observation(n, j);
          s.selfadjointView<Eigen::Lower>().rankUpdate(x);
        }
        s /= static_cast<double>(n_subjects_);
        covariances_.push_back(s.selfadjointView<Eigen::Lower>());
      }
    }
    return covariances_;
  }

  /// Copies the listed subjects into a new set, in the given order.
  SampleSet select_subjects(const std::vector<Index>& which) const {
    if (which.empty()) {
      throw InvalidParameterError("select_subjects: empty selection");
    }
    SampleSet out(static_cast<Index>(which.size()), n_times_, n_vars_);
    const std::size_t row = static_cast<std::size_t>(n_times_ * n_vars_);
    for (std::size_t i = 0; i < which.size(); ++i) {
      const Index n = which[i];
      if (n < 0 || n >= n_subjects_) {
        throw InvalidParameterError("select_subjects: subject index out of range");
      }
      std::copy_n(data_.data() + static_cast<std::size_t>(n) * row, row,
                  out.data_.data() + i * row);
    }
    return out;
  }

 private:
  std::size_t offset(Index n, Index j, Index p) const {
    return static_cast<std::size_t>((n * n_times_ + j) * n_vars_ + p);
  }

  void invalidate() {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    covariances_.clear();
  }

  Index n_subjects_;
  Index n_times_;
  Index n_vars_;
  std::vector<double> data_;
  mutable std::mutex cache_mutex_;
  mutable std::vector<Matrix> covariances_;
};

inline const std::vector<Matrix>& sample_covariances(const SampleSet& samples) {
  return samples.covariances();
}

/// Parameter pair Z = (V, A): spatial factors V (P x K, sparse unit
/// columns) and temporal weights A (K x J).
struct FactorEstimate {
  Matrix v;  // P x K
  Matrix a;  // K x J

  Index vars() const { return v.rows(); }
  Index components() const { return v.cols(); }
  Index times() const { return a.cols(); }

  /// Stacked per-time composite Z_j = (V^T, diag(a_j))^T of shape (P+K) x K.
  Matrix composite(Index j) const {
    Matrix z(v.rows() + v.cols(), v.cols());
    z.topRows(v.rows()) = v;
    z.bottomRows(v.cols()) = a.col(j).asDiagonal();
    return z;
  }
};

/// Feasible-set configuration for one fit.
struct ConstraintConfig {
  Index n_components = 1;  // K
  Index sparsity = 1;      // s
  double box_bound = 1.0;  // c
  double smoothness = 1.0; // gamma
  double delta_a = 1e-5;
  KernelSpec kernel;
};

struct FitOptions {
  double step_multiplier = 1.0;  // fraction of the step-size bound, in (0, 1]
  double epsilon_stop = 1e-7;    // relative to 1 + initial objective
  int max_iter = 1000;
  bool use_qr = false;
  int max_alt_iter = 100;
  double proj_tol = 1e-8;
  std::uint64_t rng_seed = 0;
};

struct FitReport {
  std::vector<double> objective_trace;  // length iterations + 1
  std::vector<double> dist_trace;       // filled only when truth is supplied
  int iterations = 0;
  double step_size = 0.0;
  double wall_time_s = 0.0;
  int zero_column_events = 0;
  int infeasible_row_events = 0;
};

}  // namespace dyncov
