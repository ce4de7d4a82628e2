#include <doctest.h>

#include <limits>

#include "ncca/error.hpp"
#include "ncca/mixing.hpp"
#include "test_util.hpp"

using namespace ncca;

TEST_CASE("generated layers respect the condition limit") {
  const DecoderParams dec = make_decoder(10, 50, 3, 0, 6.0);
  REQUIRE(dec.layers.size() == 3);
  CHECK(dec.layers[0].rows() == 10);
  CHECK(dec.layers[0].cols() == 50);
  for (std::size_t k = 1; k < dec.layers.size(); ++k) {
    CHECK(dec.layers[k].rows() == 50);
    CHECK(dec.layers[k].cols() == 50);
  }
  for (const Matrix& w : dec.layers) {
    // Independent check: the extreme singular values from a fresh BDC SVD.
    const Vector sv = Eigen::BDCSVD<Matrix>(w).singularValues();
    CHECK(sv(0) / sv(sv.size() - 1) <= 6.0 * (1 + 1e-9));
  }
}

TEST_CASE("the lift has orthonormal rows") {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    const DecoderParams dec = make_decoder(5, 20, 2, seed, 4.0);
    const Matrix gram = dec.layers[0] * dec.layers[0].transpose();
    CHECK((gram - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("unit condition limit yields a scaled orthogonal layer") {
  const DecoderParams dec = make_decoder(2, 2, 2, 3, 1.0);
  const Matrix& w = dec.layers[1];
  const Matrix gram = w.transpose() * w;
  CHECK((gram - gram(0, 0) * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-12);

  const DecoderParams single = make_decoder(2, 2, 1, 3, 1.0);
  const Matrix g1 = single.layers[0] * single.layers[0].transpose();
  CHECK((g1 - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("same seed gives identical weights, different seed does not") {
  const DecoderParams a = make_decoder(5, 20, 3, 42, 4.0);
  const DecoderParams b = make_decoder(5, 20, 3, 42, 4.0);
  const DecoderParams c = make_decoder(5, 20, 3, 43, 4.0);
  for (std::size_t k = 0; k < a.layers.size(); ++k) CHECK(a.layers[k] == b.layers[k]);
  CHECK_FALSE(a.layers[1] == c.layers[1]);
}

TEST_CASE("identity lift with unit slope pads sources with zeros") {
  DecoderParams dec;
  dec.d_s = 3;
  dec.d_x = 5;
  dec.depth = 1;
  dec.slope = 1.0;
  dec.layers.push_back(Matrix::Identity(3, 5));
  const Matrix s = testutil::gaussian(10, 3, 1);
  const Matrix x = decode(dec, s);
  CHECK(x.leftCols(3) == s);
  CHECK(x.rightCols(2).isZero(0));
}

TEST_CASE("zero sources map to zero") {
  const DecoderParams dec = make_decoder(4, 16, 3, 0, 4.0);
  CHECK(decode(dec, Matrix::Zero(7, 4)).isZero(0));
}

TEST_CASE("decoded outputs follow the leaky activation layer by layer") {
  const DecoderParams dec = make_decoder(3, 9, 3, 5, 4.0);
  const Matrix s = testutil::gaussian(50, 3, 2);
  Matrix h = s;
  for (const Matrix& w : dec.layers) {
    h = h * w;
    for (Eigen::Index i = 0; i < h.size(); ++i)
      if (h(i) < 0) h(i) *= kLeakySlope;
  }
  CHECK((decode(dec, s) - h).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("decoder is injective on random probes") {
  const DecoderParams dec = make_decoder(5, 20, 3, 0, 4.0);
  const Matrix a = testutil::gaussian(10000, 5, 10);
  const Matrix b = testutil::gaussian(10000, 5, 11);
  const Matrix xa = decode(dec, a), xb = decode(dec, b);
  double min_dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < a.rows(); ++i) min_dist = std::min(min_dist, (xa.row(i) - xb.row(i)).norm());
  CHECK(min_dist > 0.0);

  // Lower Lipschitz bound: every layer shrinks distances by at most
  // slope * s_min, so ||g(a) - g(b)|| >= prod(slope * s_min) ||a - b||.
  double bound = 1.0;
  for (const Matrix& w : dec.layers) {
    const Vector sv = Eigen::BDCSVD<Matrix>(w).singularValues();
    bound *= kLeakySlope * sv(sv.size() - 1);
  }
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    CHECK((xa.row(i) - xb.row(i)).norm() >= bound * (a.row(i) - b.row(i)).norm() * (1 - 1e-9));
}

TEST_CASE("decoder errors") {
  CHECK_THROWS_AS(make_decoder(5, 4, 2, 0, 4.0), Error);
  try {
    make_decoder(5, 4, 2, 0, 4.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidDimension);
  }
  const DecoderParams dec = make_decoder(3, 6, 2, 0, 4.0);
  try {
    decode(dec, Matrix::Zero(4, 2));
    FAIL("expected InvalidShape");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidShape);
  }
}

TEST_CASE("decoder json round-trip is exact") {
  const DecoderParams dec = make_decoder(4, 16, 3, 8, 4.0);
  const DecoderParams back = decoder_from_json(nlohmann::json::parse(to_json(dec).dump()));
  REQUIRE(back.layers.size() == dec.layers.size());
  for (std::size_t k = 0; k < dec.layers.size(); ++k) CHECK(back.layers[k] == dec.layers[k]);
  const Matrix s = testutil::gaussian(20, 4, 3);
  CHECK(decode(back, s) == decode(dec, s));
}
