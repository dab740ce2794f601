#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyncov {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct InvalidParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DegenerateKernelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroVectorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RankDeficiencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  int iteration;
  DivergenceError(const std::string& msg, int it)
      : std::runtime_error(msg), iteration(it) {}
};

/// Deterministic random stream. Draws are produced directly from the
/// mt19937_64 word stream so that sequences are reproducible across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    constexpr double two_pi = 6.283185307179586476925287;
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log1p(-u1));
    const double angle = two_pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, bound) by rejection.
  std::uint64_t integer(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t draw;
    do {
      draw = engine_();
    } while (draw >= limit);
    return draw % bound;
  }

  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[integer(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

namespace detail {

/// Fixes the sign of an eigenvector in place: the entry of largest
/// magnitude is made positive, ties resolved by the first index.
inline void fix_sign(Eigen::Ref<Vector> v) {
  Index lead = 0;
  double best = std::abs(v[0]);
  for (Index i = 1; i < v.size(); ++i) {
    const double mag = std::abs(v[i]);
    if (mag > best) {
      best = mag;
      lead = i;
    }
  }
  if (v[lead] < 0.0) v = -v;
}

struct SymmetricEigen {
  Vector values;   // descending
  Matrix vectors;  // columns match values, signs fixed
};

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted in
/// descending order and eigenvector signs fixed for reproducibility.
inline SymmetricEigen sym_eig_desc(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("sym_eig_desc: eigendecomposition failed");
  }
  const Index n = m.rows();
  SymmetricEigen out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  for (Index k = 0; k < n; ++k) fix_sign(out.vectors.col(k));
  return out;
}

}  // namespace detail

}  // namespace dyncov
