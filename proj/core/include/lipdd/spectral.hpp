#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "lipdd/linalg.hpp"

namespace lipdd {

struct PowerIterSettings {
  std::size_t max_iters = 1000;
  double rel_tol = 1e-9;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A linear map given only through its action and the action of its adjoint.
struct LinearOperator {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::function<void(std::span<const double>, std::span<double>)> apply;
  std::function<void(std::span<const double>, std::span<double>)> apply_adjoint;
};

/// Largest singular value by power iteration on mᵀm. Zero matrix yields 0.
double spectral_norm_dense(const Matrix& m, const PowerIterSettings& s = {});

/// Largest singular value of an implicit operator. The adjoint pair is
/// checked on three random unit vectors before iterating.
double spectral_norm_operator(const LinearOperator& op, const PowerIterSettings& s = {});

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration. Used for the small Gram matrices of input Jacobians.
double top_eigenvalue_psd(const Matrix& sym, const PowerIterSettings& s = {});

/// Exact reference: cyclic Jacobi eigen-decomposition of the smaller Gram
/// matrix. Test scale only (both dimensions ≤ 512).
double svd_oracle(const Matrix& m);

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
Vector jacobi_eigenvalues(Matrix sym);

/// Materializes an operator column by column from unit impulses.
Matrix materialize(const LinearOperator& op);

}  // namespace lipdd
