#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncca/linalg.hpp"

namespace ncca {

enum class Mode { Train, Eval };

/// Linear -> batch norm -> leaky activation, with an identity skip when the
/// layer preserves width. Biases and norm parameters are stored as 1 x w.
struct HiddenLayer {
  Matrix weight;  // in x out
  Matrix bias;
  Matrix gamma;
  Matrix beta;
  Matrix running_mean;
  Matrix running_var;
  bool residual = false;
};

/// Residual feedforward encoder f: R^{d_in} -> R^{d_Z}; the last layer is linear.
struct EncoderParams {
  std::vector<HiddenLayer> hidden;
  Matrix out_weight;  // last_width x d_Z
  Matrix out_bias;
  int d_in = 0;
  int d_z = 0;
  std::uint64_t seed = 0;
  double slope = 0.2;
  double norm_momentum = 0.1;
  double norm_eps = 1e-5;
  // Bumped on every parameter update; caches from older versions are stale.
  std::uint64_t version = 0;

  /// Trainable tensors in a fixed order (per hidden layer: W, b, gamma, beta;
  /// then output W, b). Running statistics are not included.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::size_t parameter_count() const;
};

struct LayerCache {
  Matrix input;
  Matrix xhat;
  Matrix inv_std;  // 1 x w
  Matrix y;        // normalized and affinely rescaled, pre-activation
};

struct ForwardCache {
  const EncoderParams* owner = nullptr;
  std::uint64_t version = 0;
  Mode mode = Mode::Eval;
  std::vector<LayerCache> layers;
  Matrix last_hidden;
};

struct ForwardResult {
  Matrix z;
  ForwardCache cache;
};

/// Gradients aligned with EncoderParams::parameters().
struct EncoderGrads {
  std::vector<Matrix> tensors;
};

EncoderParams init_encoder(int d_in, int d_z, const std::vector<int>& hidden_widths, std::uint64_t seed);

/// Train mode normalizes with batch statistics and updates the running state;
/// eval mode uses the frozen running state.
ForwardResult forward(EncoderParams& enc, const Matrix& x, Mode mode);
Matrix forward_eval(const EncoderParams& enc, const Matrix& x);

/// Reverse-mode gradient of a scalar loss given dLoss/dZ, including the paths
/// through the batch statistics.
EncoderGrads backward(const EncoderParams& enc, const ForwardCache& cache, const Matrix& grad_z);

/// Post-hoc ridge whitening (Z - mean) (Sigma + eps I)^{-1/2}; eps may be 0.
Matrix whiten_outputs(const Matrix& z, double epsilon);

nlohmann::json to_json(const EncoderParams& enc);
EncoderParams encoder_from_json(const nlohmann::json& j);

}  // namespace ncca
