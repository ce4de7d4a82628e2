#include "ncca/linalg.hpp"

#include <algorithm>
#include <mutex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ncca {

Matrix inverse_sqrt_psd(const Matrix& a, double ridge) {
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  Vector lambda = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    lambda(i) = 1.0 / std::sqrt(std::max(lambda(i), 0.0) + ridge);
  }
  const Matrix& v = eig.eigenvectors();
  return v * lambda.asDiagonal() * v.transpose();
}

RowVector column_means(const Matrix& x) { return x.colwise().mean(); }

Matrix center_columns(const Matrix& x) { return x.rowwise() - x.colwise().mean(); }

Matrix sample_cov(const Matrix& xc, const Matrix& yc) {
  return (xc.transpose() * yc) / static_cast<double>(xc.rows() - 1);
}

void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

bool all_finite(const Matrix& x) { return x.allFinite(); }

Vector singular_values(const Matrix& a) {
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues();
}

}  // namespace ncca
