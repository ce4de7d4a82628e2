#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncca/linalg.hpp"

namespace ncca {

inline constexpr double kLeakySlope = 0.2;

/// Random injective generator x = g(s): an orthonormal lift R^{d_S} -> R^{d_X}
/// followed by square layers with clipped spectra, each layer followed by a
/// leaky piecewise-linear activation. Weights act on row vectors (h <- h W).
struct DecoderParams {
  std::vector<Matrix> layers;  // layers[0] is d_S x d_X, the rest d_X x d_X
  int d_s = 0;
  int d_x = 0;
  int depth = 0;
  double slope = kLeakySlope;
  double cond_limit = 1.0;
  std::uint64_t seed = 0;
};

DecoderParams make_decoder(int d_s, int d_x, int depth, std::uint64_t seed, double cond_limit,
                           double slope = kLeakySlope);

Matrix decode(const DecoderParams& dec, const Matrix& s);

double condition_number(const Matrix& w);

nlohmann::json to_json(const DecoderParams& dec);
DecoderParams decoder_from_json(const nlohmann::json& j);

}  // namespace ncca
