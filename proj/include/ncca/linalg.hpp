#pragma once

#include <Eigen/Dense>

namespace ncca {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Symmetric inverse square root (A + ridge I)^{-1/2} via eigendecomposition.
/// Eigenvalues are floored at `ridge` so the result is finite for PSD input.
Matrix inverse_sqrt_psd(const Matrix& a, double ridge);

/// Column means of a sample matrix (rows are samples).
RowVector column_means(const Matrix& x);

/// x minus its column means.
Matrix center_columns(const Matrix& x);

/// Sample covariance with 1/(n-1) normalization.
Matrix sample_cov(const Matrix& xc, const Matrix& yc);

bool all_finite(const Matrix& x);

/// Keeps large temporaries out of mmap so per-step allocations do not
/// page-fault. Idempotent; a no-op outside glibc.
void tune_allocator();

/// Singular values of a square-ish matrix, descending.
Vector singular_values(const Matrix& a);

}  // namespace ncca
