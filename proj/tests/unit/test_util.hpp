#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "ncca/linalg.hpp"

namespace testutil {

using ncca::Matrix;

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(gen);
  return m;
}

inline Matrix random_orthogonal(Eigen::Index d, std::uint64_t seed) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(d, d, seed));
  return qr.householderQ() * Matrix::Identity(d, d);
}

// Relative error with a floor tied to the overall gradient scale, so
// near-zero entries are not judged on round-off alone.
inline double max_rel_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a(i)), std::abs(b(i)), 1e-3 * scale, 1e-12});
    worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
  }
  return worst;
}

inline double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::ArrayXd xc = x.array() - x.mean();
  const Eigen::ArrayXd yc = y.array() - y.mean();
  return (xc * yc).sum() / std::sqrt((xc * xc).sum() * (yc * yc).sum());
}

}  // namespace testutil
