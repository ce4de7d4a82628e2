#include <doctest.h>

#include "ncca/cca_core.hpp"
#include "ncca/error.hpp"
#include "ncca/latent_model.hpp"
#include "test_util.hpp"

using namespace ncca;
using testutil::gaussian;
using testutil::random_orthogonal;

namespace {

// Independent objective: Cholesky whitening instead of the symmetric root.
// K differs by orthogonal factors, so its nuclear norm is the same.
double oracle_objective(const Matrix& z, const Matrix& zp, double eps) {
  const Eigen::Index n = z.rows(), d = z.cols();
  const Matrix zc = z.rowwise() - z.colwise().mean();
  const Matrix zpc = zp.rowwise() - zp.colwise().mean();
  const double f = 1.0 / static_cast<double>(n - 1);
  const Matrix szz = f * zc.transpose() * zc + eps * Matrix::Identity(d, d);
  const Matrix spp = f * zpc.transpose() * zpc + eps * Matrix::Identity(zp.cols(), zp.cols());
  const Matrix szp = f * zc.transpose() * zpc;
  const Eigen::LLT<Matrix> lz(szz), lp(spp);
  const Matrix left = lz.matrixL().solve(szp);
  const Matrix k = lp.matrixL().solve(left.transpose()).transpose();
  return Eigen::JacobiSVD<Matrix>(k).singularValues().sum();
}

double objective(const Matrix& z, const Matrix& zp, double eps) {
  return cca_objective(empirical_cross_stats(z, zp, eps));
}

ErrorCode code_of(auto fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an ncca::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("self correlation whitens to the identity") {
  const Matrix z = gaussian(2000, 4, 1);
  const CcaStats st = empirical_cross_stats(z, z, 1e-10);
  CHECK((st.k - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-6);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::abs(st.singulars(i) - 1.0) <= 1e-6);
}

TEST_CASE("independent noise has small canonical correlations") {
  const Matrix z = gaussian(100000, 5, 2), zp = gaussian(100000, 5, 3);
  const CcaStats st = empirical_cross_stats(z, zp, 1e-3);
  CHECK(st.singulars.maxCoeff() <= 0.05);
}

TEST_CASE("orthogonal rotation of one view keeps singulars at one") {
  const Matrix z = gaussian(3000, 4, 4);
  const Matrix zp = z * random_orthogonal(4, 5);
  const CcaStats st = empirical_cross_stats(z, zp, 1e-10);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::abs(st.singulars(i) - 1.0) <= 1e-6);
}

TEST_CASE("stats invariants: symmetry, whitener contract, ordering, bounds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix z = gaussian(200, 4, 100 + seed);
    const Matrix zp = 0.5 * z + gaussian(200, 4, 200 + seed);
    const double eps = 1e-3;
    const CcaStats st = empirical_cross_stats(z, zp, eps);
    CHECK((st.sigma_zz - st.sigma_zz.transpose()).norm() <= 1e-12 * st.sigma_zz.norm());
    const Matrix eye = Matrix::Identity(4, 4);
    CHECK((st.w_z * (st.sigma_zz + eps * eye) * st.w_z - eye).norm() <= 1e-8);
    CHECK((st.w_zp * (st.sigma_zpzp + eps * eye) * st.w_zp - eye).norm() <= 1e-8);
    for (Eigen::Index i = 0; i + 1 < 4; ++i) CHECK(st.singulars(i) >= st.singulars(i + 1));
    CHECK(st.singulars.minCoeff() >= 0.0);
    CHECK(st.singulars.maxCoeff() <= 1.0 + 1e-6);
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(st.sigma_zz + eps * eye).eigenvalues();
    CHECK(ev.minCoeff() >= eps * (1 - 1e-9));
  }
}

TEST_CASE("objective of fixed K matrices") {
  // Build inputs whose whitened cross-covariance is a known diagonal: white
  // z and z' = diag(r) z + independent remainder, at large n.
  CcaStats st;
  st.singulars = Vector::Ones(3);
  CHECK(cca_objective(st) == 3.0);
  st.singulars = Vector(2);
  st.singulars << 0.9, 0.85;
  CHECK(cca_objective(st) == doctest::Approx(1.75));
}

TEST_CASE("ground truth sources reach the population objective") {
  const LatentSpec spec = make_latent_spec(Family::Gaussian, 2, {0.9, 0.85});
  const SourceBatch b = sample_source_pair(spec, 1000000, 5);
  CHECK(std::abs(objective(b.s, b.s_prime, 1e-4) - 1.75) <= 0.01);
}

TEST_CASE("objective agrees with a Cholesky-whitened oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix z = gaussian(100, 3, seed);
    const Matrix zp = z * gaussian(3, 3, 50 + seed) + gaussian(100, 3, 80 + seed);
    CHECK(std::abs(objective(z, zp, 1e-2) - oracle_objective(z, zp, 1e-2)) <= 1e-10);
  }
}

TEST_CASE("gradient matches central differences on random instances") {
  const double eps = 1e-2, h = 1e-5;
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 100; ++seed) {
    const Matrix z = gaussian(64, 4, 1000 + seed);
    const Matrix zp = 0.7 * z * random_orthogonal(4, 2000 + seed) + gaussian(64, 4, 3000 + seed);
    const CcaGradient g = cca_gradient(z, zp, eps);
    if (g.non_unique) continue;
    Matrix fd(64, 4), fdp(64, 4);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      Matrix a = z, b = z;
      a(i) += h;
      b(i) -= h;
      fd(i) = (oracle_objective(a, zp, eps) - oracle_objective(b, zp, eps)) / (2 * h);
      Matrix c = zp, e = zp;
      c(i) += h;
      e(i) -= h;
      fdp(i) = (oracle_objective(z, c, eps) - oracle_objective(z, e, eps)) / (2 * h);
    }
    CHECK(testutil::max_rel_error(g.g, fd) < 1e-4);
    CHECK(testutil::max_rel_error(g.gp, fdp) < 1e-4);
    CHECK(g.g.colwise().sum().cwiseAbs().maxCoeff() <= 1e-10);
    ++checked;
  }
}

TEST_CASE("gradient is translation invariant") {
  const Matrix z = gaussian(50, 3, 7), zp = gaussian(50, 3, 8) + 0.5 * z;
  RowVector v(3);
  v << 1.5, -2.0, 0.25;
  const CcaGradient a = cca_gradient(z, zp, 1e-2);
  const CcaGradient b = cca_gradient(z.rowwise() + v, zp, 1e-2);
  CHECK((a.g - b.g).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((a.gp - b.gp).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("gradient is orthogonally equivariant") {
  const Matrix z = gaussian(80, 4, 9), zp = gaussian(80, 4, 10) + z;
  const Matrix q = random_orthogonal(4, 11);
  const CcaGradient a = cca_gradient(z, zp, 1e-2);
  const CcaGradient b = cca_gradient(z * q, zp, 1e-2);
  CHECK((a.g * q - b.g).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((a.gp - b.gp).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("objective is invariant under orthogonal transforms of each view") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix z = gaussian(300, 5, seed), zp = 0.3 * z + gaussian(300, 5, 40 + seed);
    const double base = objective(z, zp, 1e-3);
    const double rotated = objective(z * random_orthogonal(5, 60 + seed), zp * random_orthogonal(5, 70 + seed), 1e-3);
    CHECK(std::abs(base - rotated) <= 1e-8);
  }
}

TEST_CASE("objective does not increase with the ridge") {
  const Matrix z = gaussian(300, 4, 12), zp = 0.6 * z + gaussian(300, 4, 13);
  double prev = objective(z, zp, 1e-6);
  for (double eps : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    const double cur = objective(z, zp, eps);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("tied singular values are flagged") {
  const Matrix z = gaussian(500, 3, 14);
  CHECK(cca_gradient(z, z, 1e-10).non_unique);
  const Matrix zp = z * Vector(Eigen::Vector3d(1.0, 0.5, 0.2)).asDiagonal() + gaussian(500, 3, 15);
  CHECK_FALSE(cca_gradient(z, zp, 1e-3).non_unique);
}

TEST_CASE("cca_core errors") {
  CHECK(code_of([] { empirical_cross_stats(Matrix::Zero(1, 2), Matrix::Zero(1, 2), 1e-3); }) ==
        ErrorCode::InsufficientSamples);
  Matrix bad = gaussian(10, 2, 1);
  bad(3, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK(code_of([&] { empirical_cross_stats(bad, gaussian(10, 2, 2), 1e-3); }) == ErrorCode::NonFiniteInput);
  CHECK(code_of([] { empirical_cross_stats(gaussian(10, 2, 1), gaussian(10, 3, 2), 1e-3); }) ==
        ErrorCode::InvalidShape);
}

TEST_CASE("linear cca recovers source correlations") {
  const LatentSpec spec = make_latent_spec(Family::Gaussian, 2, {0.9, 0.85});
  const SourceBatch b = sample_source_pair(spec, 1000000, 6);
  const LinearCca fit = linear_cca_fit(b.s, b.s_prime, 2, 1e-6);
  CHECK(std::abs(fit.correlations(0) - 0.9) <= 0.005);
  CHECK(std::abs(fit.correlations(1) - 0.85) <= 0.005);

  // The returned maps produce whitened projections with those correlations.
  const Matrix p = (b.s * fit.a).rowwise() + fit.bias;
  const Matrix pp = (b.s_prime * fit.a_prime).rowwise() + fit.bias_prime;
  const Matrix pc = center_columns(p), ppc = center_columns(pp);
  const Matrix cov = sample_cov(pc, pc);
  CHECK((cov - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-3);
  CHECK(std::abs(p.col(0).mean()) <= 1e-8);
  CHECK(std::abs(testutil::pearson(p.col(0), pp.col(0)) - fit.correlations(0)) <= 1e-3);
}

TEST_CASE("linear cca on identical and independent views") {
  const Matrix x = gaussian(5000, 3, 16);
  const LinearCca same = linear_cca_fit(x, x, 3, 1e-10);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(std::abs(same.correlations(i) - 1.0) <= 1e-6);
  const LinearCca indep = linear_cca_fit(gaussian(100000, 4, 17), gaussian(100000, 4, 18), 2, 1e-6);
  CHECK(indep.correlations.maxCoeff() <= 0.05);
}
