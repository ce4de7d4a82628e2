#include <doctest.h>

#include <cmath>

#include "ncca/error.hpp"
#include "ncca/latent_model.hpp"
#include "ncca/cca_core.hpp"
#include "ncca/metrics.hpp"
#include "test_util.hpp"

using namespace ncca;
using testutil::gaussian;
using testutil::random_orthogonal;

namespace {

// Independent R^2: normal equations on [Z, 1] solved with a Cholesky factor.
Vector oracle_r2(const Matrix& s, const Matrix& z) {
  Matrix a(z.rows(), z.cols() + 1);
  a << z, Matrix::Ones(z.rows(), 1);
  const Matrix coef = (a.transpose() * a).llt().solve(a.transpose() * s);
  const Matrix resid = s - a * coef;
  Vector out(s.cols());
  for (Eigen::Index i = 0; i < s.cols(); ++i) {
    const double tss = (s.col(i).array() - s.col(i).mean()).square().sum();
    out(i) = 1.0 - resid.col(i).squaredNorm() / tss;
  }
  return out;
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

TEST_CASE("exact affine relation gives unit R^2") {
  const Matrix s = gaussian(500, 4, 1);
  RowVector b(4);
  b << 1, -2, 3, 0.5;
  const Matrix z = (s * gaussian(4, 4, 2)).rowwise() + b;
  const RSquared r = r_squared(s, z);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::abs(r.per_dim(i) - 1.0) <= 1e-10);
  CHECK(std::abs(r.mean - 1.0) <= 1e-10);
}

TEST_CASE("independent noise gives R^2 near zero") {
  const RSquared r = r_squared(gaussian(100000, 10, 3), gaussian(100000, 10, 4));
  CHECK(r.mean <= 0.01);
}

TEST_CASE("dropping a coordinate leaves it unexplained") {
  const Matrix s = gaussian(20000, 3, 5);
  const RSquared r = r_squared(s, s.leftCols(2));
  CHECK(std::abs(r.per_dim(0) - 1.0) <= 1e-10);
  CHECK(std::abs(r.per_dim(1) - 1.0) <= 1e-10);
  CHECK(r.per_dim(2) <= 0.01);
}

TEST_CASE("R^2 agrees with a normal-equations oracle and is affine invariant") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix s = gaussian(300, 3, seed);
    const Matrix z = s.array().tanh().matrix() * gaussian(3, 4, 20 + seed) + 0.5 * gaussian(300, 4, 40 + seed);
    const RSquared r = r_squared(s, z);
    CHECK((r.per_dim - oracle_r2(s, z)).cwiseAbs().maxCoeff() <= 1e-10);
    const Matrix z2 = (z * gaussian(4, 4, 60 + seed)).rowwise() + RowVector::Constant(4, 3.0);
    CHECK((r_squared(s, z2).per_dim - r.per_dim).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(r.mean <= 1.0);
  }
}

TEST_CASE("constant targets are degenerate") {
  Matrix s = gaussian(50, 2, 6);
  s.col(1).setConstant(3.0);
  CHECK(code_of([&] { r_squared(s, gaussian(50, 2, 7)); }) == ErrorCode::DegenerateTarget);
}

TEST_CASE("principal angles of rotated and orthogonal spans") {
  const Matrix s = gaussian(1000, 3, 8);
  const PrincipalAngles same = principal_angles(s * random_orthogonal(3, 9), s);
  CHECK(same.max <= 1e-6);

  // Disjoint 1-D spans: indicator-like vectors with disjoint supports, centered.
  Matrix a = Matrix::Zero(100, 1), b = Matrix::Zero(100, 1);
  for (int i = 0; i < 50; ++i) a(i) = (i % 2 == 0) ? 1.0 : -1.0;
  for (int i = 50; i < 100; ++i) b(i) = (i % 2 == 0) ? 1.0 : -1.0;
  CHECK(std::abs(principal_angles(a, b).max - 90.0) <= 1e-8);
}

TEST_CASE("principal angles of a partially mixed basis") {
  const Matrix x = gaussian(1000000, 3, 10);
  Matrix z(x.rows(), 2), s(x.rows(), 2);
  z << x.col(0), x.col(1) + x.col(2);
  s << x.col(0), x.col(1);
  // span{s1, s2+s3} meets span{s1, s2} in s1; the other angle is the angle
  // between s2+s3 and s2, which is 45 degrees for iid unit columns.
  const PrincipalAngles pa = principal_angles(z, s);
  CHECK(std::abs(pa.degrees(0) - 0.0) <= 0.5);
  CHECK(std::abs(pa.degrees(1) - 45.0) <= 0.5);
  CHECK(pa.degrees(0) <= pa.degrees(1));
  CHECK(pa.mean == doctest::Approx((pa.degrees(0) + pa.degrees(1)) / 2));
}

TEST_CASE("principal angles depend only on spans") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix s = gaussian(400, 3, seed);
    const Matrix z = s * gaussian(3, 3, 100 + seed) + gaussian(400, 3, 200 + seed);
    const PrincipalAngles base = principal_angles(z, s);
    const PrincipalAngles mapped = principal_angles(z * gaussian(3, 3, 300 + seed), s * gaussian(3, 3, 400 + seed));
    CHECK((base.degrees - mapped.degrees).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(base.degrees.minCoeff() >= 0.0);
    CHECK(base.degrees.maxCoeff() <= 90.0);
  }
}

TEST_CASE("rank-collapsed spans are rejected") {
  Matrix z = gaussian(100, 3, 11);
  z.col(2) = 2.0 * z.col(1);
  CHECK(code_of([&] { principal_angles(z, gaussian(100, 3, 12)); }) == ErrorCode::RankDeficientSpan);
}

TEST_CASE("orbit distance vanishes on orthogonal orbits") {
  const Matrix z = gaussian(300, 4, 13), zp = gaussian(300, 4, 14);
  CHECK(orbit_distance(z, z * random_orthogonal(4, 15), zp, zp * random_orthogonal(4, 16)) <= 1e-10);
  CHECK(procrustes_residual(z, z) <= 1e-10);
  const Matrix z2 = gaussian(300, 2, 17);
  CHECK(orbit_distance(z2, -z2, z2, -z2) <= 1e-10);
  Matrix reflect = Matrix::Identity(4, 4);
  reflect(0, 0) = -1;
  CHECK(view_orbit_distance(z, z * reflect) <= 1e-10);
}

TEST_CASE("orbit distance is bounded by the identity alignment") {
  const Matrix q = random_orthogonal(50, 18).leftCols(3);  // orthonormal columns
  const Matrix e = 0.05 * gaussian(50, 3, 19);
  const double d = orbit_distance(q, q + e, q, q + e);
  CHECK(d >= 0.0);
  CHECK(d <= 2.0 * e.squaredNorm() / 50.0 + 1e-15);
}

TEST_CASE("procrustes residual matches its closed form and properties") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix z = gaussian(200, 3, seed), zh = gaussian(200, 3, 50 + seed) + z;
    const double closed = zh.squaredNorm() + z.squaredNorm() -
                          2.0 * Eigen::JacobiSVD<Matrix>(z.transpose() * zh).singularValues().sum();
    const double r = procrustes_residual(z, zh);
    CHECK(std::abs(r - closed) <= 1e-9 * closed);
    const Matrix q = procrustes_rotation(z, zh);
    CHECK((q.transpose() * q - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs((zh - z * q).squaredNorm() - r) <= 1e-9 * r);
    // Symmetric, and invariant under a shared orthogonal map.
    CHECK(std::abs(procrustes_residual(zh, z) - r) <= 1e-9 * r);
    const Matrix o = random_orthogonal(3, 70 + seed);
    CHECK(std::abs(procrustes_residual(z * o, zh * o) - r) <= 1e-9 * r);
    CHECK(view_orbit_distance(z, zh) == doctest::Approx(r / 200.0));
  }
}

TEST_CASE("singular value gap") {
  Vector a(2), b(2);
  a << 0.9, 0.85;
  b << 0.9, 0.80;
  CHECK(singular_gap_linf(a, a) == 0.0);
  CHECK(singular_gap_linf(a, b) == doctest::Approx(0.05));
  CHECK(code_of([&] { singular_gap_linf(a, Vector::Zero(3)); }) == ErrorCode::InvalidShape);

  const LatentSpec spec = make_latent_spec(Family::Gaussian, 2, {0.9, 0.85});
  const SourceBatch s = sample_source_pair(spec, 1000000, 20);
  const Vector emp = empirical_cross_stats(s.s, s.s_prime, 1e-8).singulars;
  CHECK(singular_gap_linf(emp, a) <= 0.01);
}
