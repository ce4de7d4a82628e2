#include "ncca/mixing.hpp"

#include <cmath>
#include <random>

#include "ncca/error.hpp"
#include "ncca/json_io.hpp"
#include "ncca/rng.hpp"

namespace ncca {

namespace {

Matrix gaussian_matrix(int rows, int cols, CounterRng& rng) {
  std::normal_distribution<double> dist;
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  return m;
}

// Projects the spectrum onto [s_max / cond, s_max], then rescales it to
// [1/sqrt(cond), sqrt(cond)] so depth does not shrink or blow up the signal.
Matrix clip_spectrum(const Matrix& w, double cond_limit) {
  Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector sv = svd.singularValues();
  const double s_max = sv(0);
  for (Eigen::Index i = 0; i < sv.size(); ++i) sv(i) = std::max(sv(i), s_max / cond_limit);
  sv *= std::sqrt(cond_limit) / s_max;
  return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace

DecoderParams make_decoder(int d_s, int d_x, int depth, std::uint64_t seed, double cond_limit,
                           double slope) {
  if (d_s < 1 || d_x < d_s) throw Error(ErrorCode::InvalidDimension, "decoder needs d_X >= d_S >= 1");
  if (depth < 1) throw Error(ErrorCode::InvalidDimension, "decoder depth must be >= 1");
  if (!(cond_limit >= 1.0)) throw Error(ErrorCode::InvalidDimension, "cond_limit must be >= 1");

  DecoderParams dec;
  dec.d_s = d_s;
  dec.d_x = d_x;
  dec.depth = depth;
  dec.slope = slope;
  dec.cond_limit = cond_limit;
  dec.seed = seed;

  CounterRng rng(seed, 0);
  // Orthonormal rows: Q factor of a Gaussian d_X x d_S matrix, transposed.
  Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(d_x, d_s, rng));
  Matrix q = qr.householderQ() * Matrix::Identity(d_x, d_s);
  dec.layers.push_back(q.transpose());
  for (int k = 1; k < depth; ++k) dec.layers.push_back(clip_spectrum(gaussian_matrix(d_x, d_x, rng), cond_limit));
  return dec;
}

Matrix decode(const DecoderParams& dec, const Matrix& s) {
  if (s.cols() != dec.d_s) throw Error(ErrorCode::InvalidShape, "decode: column count must equal d_S");
  Matrix h = s;
  for (const Matrix& w : dec.layers) {
    const Matrix a = h * w;
    const double sl = dec.slope;
    h = a.array() * (sl + (1.0 - sl) * (a.array() >= 0.0).cast<double>());
  }
  return h;
}

double condition_number(const Matrix& w) {
  const Vector sv = singular_values(w);
  return sv(0) / sv(sv.size() - 1);
}

nlohmann::json to_json(const DecoderParams& dec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Matrix& w : dec.layers) layers.push_back(matrix_to_json(w));
  return {{"d_S", dec.d_s},   {"d_X", dec.d_x},   {"depth", dec.depth},           {"slope", dec.slope},
          {"seed", dec.seed}, {"cond_limit", dec.cond_limit}, {"layers", layers}};
}

DecoderParams decoder_from_json(const nlohmann::json& j) {
  DecoderParams dec;
  dec.d_s = j.at("d_S").get<int>();
  dec.d_x = j.at("d_X").get<int>();
  dec.depth = j.at("depth").get<int>();
  dec.slope = j.at("slope").get<double>();
  dec.seed = j.at("seed").get<std::uint64_t>();
  dec.cond_limit = j.at("cond_limit").get<double>();
  for (const auto& layer : j.at("layers")) dec.layers.push_back(matrix_from_json(layer));
  if (static_cast<int>(dec.layers.size()) != dec.depth) {
    throw Error(ErrorCode::InvalidShape, "decoder layer count does not match depth");
  }
  return dec;
}

}  // namespace ncca
