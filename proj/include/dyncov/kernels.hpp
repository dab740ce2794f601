#pragma once

#include "dyncov/types.hpp"

#include <cmath>
#include <string>

namespace dyncov {

enum class KernelKind { gaussian, matern_five_half, rational_quadratic };

inline std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::gaussian: return "gaussian";
    case KernelKind::matern_five_half: return "matern_five_half";
    case KernelKind::rational_quadratic: return "rational_quadratic";
  }
  return "unknown";
}

inline KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "gaussian") return KernelKind::gaussian;
  if (name == "matern_five_half") return KernelKind::matern_five_half;
  if (name == "rational_quadratic") return KernelKind::rational_quadratic;
  throw InvalidParameterError("unknown kernel kind: " + name);
}

/// Stationary kernel on the integer time grid 1..J.
struct KernelSpec {
  KernelKind kind = KernelKind::gaussian;
  double length_scale = 1.0;
  double variance = 1.0;
  double rq_shape = 1.0;  // shape of the rational quadratic kernel
};

inline void validate(const KernelSpec& spec) {
  if (!(spec.length_scale > 0.0)) {
    throw InvalidParameterError("KernelSpec: length_scale must be positive");
  }
  if (!(spec.variance > 0.0)) {
    throw InvalidParameterError("KernelSpec: variance must be positive");
  }
  if (!(spec.rq_shape > 0.0)) {
    throw InvalidParameterError("KernelSpec: rq_shape must be positive");
  }
}

inline double kernel_value(const KernelSpec& spec, double x, double y) {
  const double d = std::abs(x - y);
  const double l = spec.length_scale;
  switch (spec.kind) {
    case KernelKind::gaussian:
      return spec.variance * std::exp(-d * d / (2.0 * l * l));
    case KernelKind::matern_five_half: {
      const double t = std::sqrt(5.0) * d / l;
      return spec.variance * (1.0 + t + 5.0 * d * d / (3.0 * l * l)) * std::exp(-t);
    }
    case KernelKind::rational_quadratic:
      return spec.variance *
             std::pow(1.0 + d * d / (2.0 * spec.rq_shape * l * l), -spec.rq_shape);
  }
  throw InvalidParameterError("kernel_value: unknown kernel kind");
}

/// Kernel matrix G with G(x,y) = kernel(x+1, y+1) on the grid 1..J.
inline Matrix build_kernel(const KernelSpec& spec, Index n_times) {
  validate(spec);
  if (n_times < 1) {
    throw InvalidParameterError("build_kernel: J must be at least 1");
  }
  Matrix g(n_times, n_times);
  for (Index x = 0; x < n_times; ++x) {
    g(x, x) = spec.variance;
    for (Index y = x + 1; y < n_times; ++y) {
      const double value =
          kernel_value(spec, static_cast<double>(x + 1), static_cast<double>(y + 1));
      g(x, y) = value;
      g(y, x) = value;
    }
  }
  return g;
}

/// Eigenbasis of the kernel matrix truncated at level delta_a.
///
/// Q holds the eigenvectors of G whose eigenvalues are >= delta_a, in
/// descending eigenvalue order; lambda holds the reciprocals of those
/// eigenvalues, so that the pseudoinverse of the truncated kernel is
/// Q diag(lambda) Q^T.
struct TruncatedKernelBasis {
  Matrix g;       // J x J kernel matrix
  Matrix q;       // J x r, column-orthonormal
  Vector lambda;  // r, eigenvalues of the truncated pseudoinverse
  double delta_a = 0.0;

  Index rank() const { return q.cols(); }
  Index size() const { return g.rows(); }
};

inline TruncatedKernelBasis truncated_basis(const Matrix& g, double delta_a) {
  if (!(delta_a > 0.0)) {
    throw InvalidParameterError("truncated_basis: delta_a must be positive");
  }
  if (g.rows() != g.cols()) {
    throw InvalidParameterError("truncated_basis: kernel matrix must be square");
  }
  const double scale = g.cwiseAbs().maxCoeff();
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1.0)) {
    throw InvalidParameterError("truncated_basis: kernel matrix must be symmetric");
  }

  const detail::SymmetricEigen eig = detail::sym_eig_desc(g);
  Index retained = 0;
  while (retained < eig.values.size() && eig.values[retained] >= delta_a) ++retained;
  if (retained == 0) {
    throw DegenerateKernelError(
        "truncated_basis: all kernel eigenvalues fall below delta_a");
  }

  TruncatedKernelBasis basis;
  basis.g = g;
  basis.q = eig.vectors.leftCols(retained);
  basis.lambda = eig.values.head(retained).cwiseInverse();
  basis.delta_a = delta_a;
  return basis;
}

}  // namespace dyncov
