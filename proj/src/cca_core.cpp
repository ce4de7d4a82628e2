#include "ncca/cca_core.hpp"

#include <algorithm>

#include "ncca/error.hpp"

namespace ncca {

namespace {

constexpr double kTieGap = 1e-8;

void check_inputs(const Matrix& z, const Matrix& zp, double epsilon) {
  if (z.rows() != zp.rows() || z.cols() != zp.cols()) {
    throw Error(ErrorCode::InvalidShape, "views must have identical shapes");
  }
  if (z.rows() < 2) throw Error(ErrorCode::InsufficientSamples, "need at least two samples");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidShape, "epsilon must be positive");
  if (!z.allFinite() || !zp.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite encoder output");
}

}  // namespace

CcaStats empirical_cross_stats(const Matrix& z, const Matrix& zp, double epsilon) {
  check_inputs(z, zp, epsilon);
  CcaStats st;
  st.n = z.rows();
  st.epsilon = epsilon;
  st.mean_z = column_means(z);
  st.mean_zp = column_means(zp);
  st.zc = z.rowwise() - st.mean_z;
  st.zpc = zp.rowwise() - st.mean_zp;
  st.sigma_zz = sample_cov(st.zc, st.zc);
  st.sigma_zpzp = sample_cov(st.zpc, st.zpc);
  st.sigma_zzp = sample_cov(st.zc, st.zpc);
  st.w_z = inverse_sqrt_psd(st.sigma_zz, epsilon);
  st.w_zp = inverse_sqrt_psd(st.sigma_zpzp, epsilon);
  st.k = st.w_z * st.sigma_zzp * st.w_zp;
  Eigen::JacobiSVD<Matrix> svd(st.k, Eigen::ComputeThinU | Eigen::ComputeThinV);
  st.u = svd.matrixU();
  st.v = svd.matrixV();
  st.singulars = svd.singularValues();
  return st;
}

double cca_objective(const CcaStats& stats) { return stats.singulars.sum(); }

CcaGradient cca_gradient(const CcaStats& st) {
  const Matrix& u = st.u;
  const Matrix& v = st.v;
  const auto s = st.singulars.asDiagonal();
  const Matrix d12 = st.w_z * u * v.transpose() * st.w_zp;
  const Matrix d11 = -0.5 * st.w_z * u * s * u.transpose() * st.w_z;
  const Matrix d22 = -0.5 * st.w_zp * v * s * v.transpose() * st.w_zp;
  const double scale = 1.0 / static_cast<double>(st.n - 1);

  CcaGradient out;
  out.g = scale * (2.0 * st.zc * d11 + st.zpc * d12.transpose());
  out.gp = scale * (2.0 * st.zpc * d22 + st.zc * d12);
  for (Eigen::Index i = 1; i < st.singulars.size(); ++i) {
    if (st.singulars(i - 1) - st.singulars(i) < kTieGap) out.non_unique = true;
  }
  return out;
}

CcaGradient cca_gradient(const Matrix& z, const Matrix& zp, double epsilon) {
  return cca_gradient(empirical_cross_stats(z, zp, epsilon));
}

LinearCca linear_cca_fit(const Matrix& x, const Matrix& xp, int d_z, double epsilon) {
  if (x.rows() != xp.rows()) throw Error(ErrorCode::InvalidShape, "views must have equal row counts");
  if (x.rows() <= std::max(x.cols(), xp.cols())) {
    throw Error(ErrorCode::InsufficientSamples, "linear CCA needs n > max(d_X, d_X')");
  }
  if (d_z < 1 || d_z > std::min(x.cols(), xp.cols())) {
    throw Error(ErrorCode::InvalidDimension, "d_Z must lie in [1, min(d_X, d_X')]");
  }
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidShape, "epsilon must be positive");

  const RowVector mx = column_means(x), mxp = column_means(xp);
  const Matrix xc = x.rowwise() - mx, xpc = xp.rowwise() - mxp;
  const Matrix sxx = sample_cov(xc, xc), sxpxp = sample_cov(xpc, xpc);

  // The ridge only repairs near-singular directions up to a point: beyond
  // ~1e12 condition number the whitened projections are numerical noise.
  for (const Matrix* s : {&sxx, &sxpxp}) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(*s, Eigen::EigenvaluesOnly);
    const double lmin = std::max(eig.eigenvalues().minCoeff(), 0.0) + epsilon;
    if (lmin < 1e-12 * (eig.eigenvalues().maxCoeff() + epsilon)) {
      throw Error(ErrorCode::IllConditioned, "covariance is rank deficient beyond ridge repair");
    }
  }

  const Matrix wx = inverse_sqrt_psd(sxx, epsilon);
  const Matrix wxp = inverse_sqrt_psd(sxpxp, epsilon);
  const Matrix k = wx * sample_cov(xc, xpc) * wxp;
  Eigen::JacobiSVD<Matrix> svd(k, Eigen::ComputeThinU | Eigen::ComputeThinV);

  LinearCca out;
  out.a = wx * svd.matrixU().leftCols(d_z);
  out.a_prime = wxp * svd.matrixV().leftCols(d_z);
  out.bias = -mx * out.a;
  out.bias_prime = -mxp * out.a_prime;
  out.correlations = svd.singularValues().head(d_z);
  return out;
}

nlohmann::json to_json(const CcaStats& st) {
  auto cond = [](const Matrix& s, double eps) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
    return (eig.eigenvalues().maxCoeff() + eps) / (std::max(eig.eigenvalues().minCoeff(), 0.0) + eps);
  };
  return {{"n", st.n},
          {"epsilon", st.epsilon},
          {"singulars", std::vector<double>(st.singulars.data(), st.singulars.data() + st.singulars.size())},
          {"objective", cca_objective(st)},
          {"cond_zz", cond(st.sigma_zz, st.epsilon)},
          {"cond_zpzp", cond(st.sigma_zpzp, st.epsilon)}};
}

}  // namespace ncca
