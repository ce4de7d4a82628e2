#pragma once

#include "ncca/linalg.hpp"

namespace ncca {

struct RSquared {
  Vector per_dim;
  double mean = 0.0;
};

/// OLS of each true coordinate on [Z, 1]; R^2_i = 1 - RSS_i / TSS_i.
RSquared r_squared(const Matrix& s_true, const Matrix& z);

struct PrincipalAngles {
  Vector degrees;  // ascending
  double mean = 0.0;
  double max = 0.0;
};

/// Angles between the column spans of the centered inputs, in degrees.
PrincipalAngles principal_angles(const Matrix& z, const Matrix& s);

/// min over orthogonal Q of ||z_hat - z Q||_F^2 (orthogonal Procrustes).
double procrustes_residual(const Matrix& z, const Matrix& z_hat);

/// The minimizing Q in O(d) (reflections allowed).
Matrix procrustes_rotation(const Matrix& z, const Matrix& z_hat);

/// Single-view orbit distance: procrustes_residual / n.
double view_orbit_distance(const Matrix& z, const Matrix& z_hat);

/// Two-view orbit distance (residual_1 + residual_2) / n.
double orbit_distance(const Matrix& z, const Matrix& z_hat, const Matrix& zp, const Matrix& zp_hat);

/// max_k |a_k - b_k|.
double singular_gap_linf(const Vector& sigma_hat, const Vector& sigma_ref);

struct ViewMetrics {
  RSquared r2;
  PrincipalAngles pa;
};

struct MetricsReport {
  ViewMetrics f;
  ViewMetrics fprime;
  double orbit_f = 0.0;       // distance of whitened z to the true sources
  double orbit_fprime = 0.0;
  double orbit_distance = 0.0;  // orbit_f + orbit_fprime
  double sigma_gap_linf = 0.0;
};

}  // namespace ncca
