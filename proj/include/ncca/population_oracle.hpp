#pragma once

#include <string>
#include <vector>

namespace ncca {

/// He_n(x) / sqrt(n!): probabilists' Hermite polynomials, orthonormal under
/// the standard Gaussian weight.
double hermite_eval(int n, double x);

/// E[He_m(s) He_n(s')] (normalized) for a standard bivariate Gaussian pair
/// with correlation rho: rho^n when m == n, otherwise 0.
double mehler_cross_moment(int m, int n, double rho);

struct SpectrumEntry {
  std::vector<int> alpha;  // multi-index
  int degree = 0;
  double value = 0.0;      // prod_i rho_i^{alpha_i}
};

/// Cross-covariance spectrum of tensorized Hermite features of total degree
/// 1..max_degree, sorted by value descending. Ties put higher degree first so
/// that exact ties never count in favour of first-order features.
struct HermiteSpectrum {
  int d = 0;
  int max_degree = 0;
  std::vector<SpectrumEntry> entries;
};

HermiteSpectrum enumerate_hermite_spectrum(const std::vector<double>& rho, int max_degree);

/// CSV with columns alpha (space-separated exponents), degree, value.
std::string spectrum_csv(const HermiteSpectrum& spectrum);

struct AffineOptimality {
  bool affine_optimal = false;
  std::vector<std::vector<int>> top_indices;
};

/// Whether the top-d_Z spectrum entries are exactly the first-order indices.
AffineOptimality verify_affine_optimality(const std::vector<double>& rho, int d_z, int max_degree = 4);

/// Population optimum of the source-space objective, sum of the top d_Z rho.
double source_space_objective(const std::vector<double>& rho, int d_z);

/// Top-k spectrum values: the population-optimal canonical correlations over
/// polynomial features of degree <= max_degree (d_Z may exceed d_S here).
std::vector<double> population_canonical_correlations(const std::vector<double>& rho, int k, int max_degree = 4);

}  // namespace ncca
