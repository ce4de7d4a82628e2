#pragma once

#include <nlohmann/json.hpp>

#include "ncca/linalg.hpp"

namespace ncca {

/// Sufficient statistics of the ridge-whitened empirical CCA objective.
struct CcaStats {
  Eigen::Index n = 0;
  RowVector mean_z, mean_zp;
  Matrix zc, zpc;  // centered inputs, kept for the gradient
  Matrix sigma_zz, sigma_zpzp, sigma_zzp;
  double epsilon = 0.0;
  Matrix w_z, w_zp;  // (Sigma + eps I)^{-1/2}
  Matrix k;          // w_z * sigma_zzp * w_zp
  Matrix u, v;       // thin SVD of k
  Vector singulars;  // descending
};

CcaStats empirical_cross_stats(const Matrix& z, const Matrix& zp, double epsilon);

/// Sum of the singular values of K (its nuclear norm).
double cca_objective(const CcaStats& stats);

struct CcaGradient {
  Matrix g, gp;
  bool non_unique = false;  // singular values tied within 1e-8: a subgradient
};

/// Gradient of the objective with respect to the raw (uncentered) outputs.
CcaGradient cca_gradient(const Matrix& z, const Matrix& zp, double epsilon);
CcaGradient cca_gradient(const CcaStats& stats);

struct LinearCca {
  Matrix a, a_prime;        // d_X x d_Z projections
  RowVector bias, bias_prime;
  Vector correlations;      // top d_Z empirical canonical correlations
};

/// Classical closed-form CCA: whitened cross-covariance SVD.
LinearCca linear_cca_fit(const Matrix& x, const Matrix& xp, int d_z, double epsilon);

nlohmann::json to_json(const CcaStats& stats);

}  // namespace ncca
