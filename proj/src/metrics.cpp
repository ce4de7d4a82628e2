#include "ncca/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ncca/error.hpp"

namespace ncca {

namespace {

// Orthonormal basis of the column span, or RankDeficientSpan.
Matrix orthonormal_basis(const Matrix& x) {
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) throw Error(ErrorCode::RankDeficientSpan, "column span is rank deficient");
  return qr.householderQ() * Matrix::Identity(x.rows(), x.cols());
}

}  // namespace

RSquared r_squared(const Matrix& s_true, const Matrix& z) {
  if (s_true.rows() != z.rows()) throw Error(ErrorCode::InvalidShape, "row count mismatch");
  if (z.rows() <= z.cols() + 1) throw Error(ErrorCode::InsufficientSamples, "need n > d_Z + 1");
  Matrix design(z.rows(), z.cols() + 1);
  design << z, Vector::Ones(z.rows());
  const Matrix fitted = design * Eigen::ColPivHouseholderQR<Matrix>(design).solve(s_true);

  RSquared out;
  out.per_dim.resize(s_true.cols());
  const Matrix centered = center_columns(s_true);
  for (Eigen::Index i = 0; i < s_true.cols(); ++i) {
    const double tss = centered.col(i).squaredNorm();
    if (tss == 0.0) throw Error(ErrorCode::DegenerateTarget, "constant target coordinate");
    out.per_dim(i) = 1.0 - (s_true.col(i) - fitted.col(i)).squaredNorm() / tss;
  }
  out.mean = out.per_dim.mean();
  return out;
}

PrincipalAngles principal_angles(const Matrix& z, const Matrix& s) {
  if (z.rows() != s.rows()) throw Error(ErrorCode::InvalidShape, "row count mismatch");
  if (z.rows() <= std::max(z.cols(), s.cols())) {
    throw Error(ErrorCode::InsufficientSamples, "need n > max(d_Z, d_S)");
  }
  const Matrix qz = orthonormal_basis(center_columns(z));
  const Matrix qs = orthonormal_basis(center_columns(s));
  const Vector cosines = singular_values(qz.transpose() * qs);
  // arccos is ill-conditioned near zero angles; there the sines of the
  // residual of the smaller basis against the larger one are accurate.
  const Matrix& small = qz.cols() <= qs.cols() ? qz : qs;
  const Matrix& large = qz.cols() <= qs.cols() ? qs : qz;
  const Vector sines = singular_values(small - large * (large.transpose() * small));
  const Eigen::Index k_count = cosines.size();
  PrincipalAngles out;
  out.degrees.resize(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const double c = std::clamp(cosines(k), 0.0, 1.0);
    const double sn = std::clamp(sines(k_count - 1 - k), 0.0, 1.0);
    const double rad = c > std::sqrt(0.5) ? std::asin(sn) : std::acos(c);
    out.degrees(k) = rad * 180.0 / std::numbers::pi;
  }
  out.mean = out.degrees.mean();
  out.max = out.degrees.maxCoeff();
  return out;
}

Matrix procrustes_rotation(const Matrix& z, const Matrix& z_hat) {
  if (z.rows() != z_hat.rows() || z.cols() != z_hat.cols()) {
    throw Error(ErrorCode::InvalidShape, "Procrustes needs equal shapes");
  }
  Eigen::JacobiSVD<Matrix> svd(z.transpose() * z_hat, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

double procrustes_residual(const Matrix& z, const Matrix& z_hat) {
  return (z_hat - z * procrustes_rotation(z, z_hat)).squaredNorm();
}

double view_orbit_distance(const Matrix& z, const Matrix& z_hat) {
  return procrustes_residual(z, z_hat) / static_cast<double>(z.rows());
}

double orbit_distance(const Matrix& z, const Matrix& z_hat, const Matrix& zp, const Matrix& zp_hat) {
  if (z.rows() != zp.rows()) throw Error(ErrorCode::InvalidShape, "views must share the sample count");
  return (procrustes_residual(z, z_hat) + procrustes_residual(zp, zp_hat)) / static_cast<double>(z.rows());
}

double singular_gap_linf(const Vector& sigma_hat, const Vector& sigma_ref) {
  if (sigma_hat.size() != sigma_ref.size()) throw Error(ErrorCode::InvalidShape, "length mismatch");
  if (sigma_hat.size() == 0) return 0.0;
  return (sigma_hat - sigma_ref).cwiseAbs().maxCoeff();
}

}  // namespace ncca
