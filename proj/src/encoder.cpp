#include "ncca/encoder.hpp"

#include <cmath>
#include <random>

#include "ncca/error.hpp"
#include "ncca/json_io.hpp"
#include "ncca/rng.hpp"

namespace ncca {

namespace {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double sd, CounterRng& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

// max(v, slope * v) equals the leaky activation for slope in (0, 1].
Matrix leaky(const Matrix& y, double slope) { return y.cwiseMax(slope * y); }

}  // namespace

std::vector<Matrix*> EncoderParams::parameters() {
  std::vector<Matrix*> out;
  for (HiddenLayer& l : hidden) {
    out.insert(out.end(), {&l.weight, &l.bias, &l.gamma, &l.beta});
  }
  out.insert(out.end(), {&out_weight, &out_bias});
  return out;
}

std::vector<const Matrix*> EncoderParams::parameters() const {
  std::vector<const Matrix*> out;
  for (const HiddenLayer& l : hidden) {
    out.insert(out.end(), {&l.weight, &l.bias, &l.gamma, &l.beta});
  }
  out.insert(out.end(), {&out_weight, &out_bias});
  return out;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t count = 0;
  for (const Matrix* p : parameters()) count += static_cast<std::size_t>(p->size());
  return count;
}

EncoderParams init_encoder(int d_in, int d_z, const std::vector<int>& hidden_widths, std::uint64_t seed) {
  if (d_in < 1 || d_z < 1) throw Error(ErrorCode::InvalidDimension, "encoder dimensions must be >= 1");
  EncoderParams enc;
  enc.d_in = d_in;
  enc.d_z = d_z;
  enc.seed = seed;
  CounterRng rng(seed, 0);
  // He initialization adjusted for the leaky slope.
  const double gain = std::sqrt(2.0 / (1.0 + enc.slope * enc.slope));
  int width = d_in;
  for (int w : hidden_widths) {
    if (w < 1) throw Error(ErrorCode::InvalidDimension, "hidden widths must be >= 1");
    HiddenLayer l;
    l.weight = normal_matrix(width, w, gain / std::sqrt(width), rng);
    l.bias = Matrix::Zero(1, w);
    l.gamma = Matrix::Ones(1, w);
    l.beta = Matrix::Zero(1, w);
    l.running_mean = Matrix::Zero(1, w);
    l.running_var = Matrix::Ones(1, w);
    l.residual = (w == width);
    enc.hidden.push_back(std::move(l));
    width = w;
  }
  enc.out_weight = normal_matrix(width, d_z, 1.0 / std::sqrt(width), rng);
  enc.out_bias = Matrix::Zero(1, d_z);
  return enc;
}

namespace {

// `stats_sink` receives running-statistics updates in train mode.
ForwardResult forward_impl(const EncoderParams& enc, const Matrix& x, Mode mode, EncoderParams* stats_sink) {
  if (x.cols() != enc.d_in) throw Error(ErrorCode::InvalidShape, "encoder input width mismatch");
  const Eigen::Index n = x.rows();
  if (mode == Mode::Train && n < 2) {
    throw Error(ErrorCode::InsufficientBatch, "batch statistics need at least two rows");
  }

  ForwardResult res;
  res.cache.owner = &enc;
  res.cache.version = enc.version;
  res.cache.mode = mode;
  Matrix h = x;
  for (std::size_t k = 0; k < enc.hidden.size(); ++k) {
    const HiddenLayer& l = enc.hidden[k];
    LayerCache c;
    Matrix a = h * l.weight;
    a.rowwise() += l.bias.row(0);
    if (mode == Mode::Train) {
      const Matrix mean = a.colwise().mean();
      a.rowwise() -= mean.row(0);
      const Matrix var = a.array().square().colwise().mean();
      c.inv_std = (var.array() + enc.norm_eps).rsqrt();
      if (stats_sink != nullptr) {
        HiddenLayer& sink = stats_sink->hidden[k];
        const double m = enc.norm_momentum;
        sink.running_mean = (1.0 - m) * sink.running_mean + m * mean;
        sink.running_var = (1.0 - m) * sink.running_var + m * var * (static_cast<double>(n) / (n - 1));
      }
    } else {
      a.rowwise() -= l.running_mean.row(0);
      c.inv_std = (l.running_var.array() + enc.norm_eps).rsqrt();
    }
    c.xhat = a.array().rowwise() * c.inv_std.row(0).array();
    c.y = (c.xhat.array().rowwise() * l.gamma.row(0).array()).rowwise() + l.beta.row(0).array();
    Matrix next = leaky(c.y, enc.slope);
    if (l.residual) next += h;
    c.input = std::move(h);
    h = std::move(next);
    res.cache.layers.push_back(std::move(c));
  }
  res.z = h * enc.out_weight;
  res.z.rowwise() += enc.out_bias.row(0);
  res.cache.last_hidden = std::move(h);
  return res;
}

}  // namespace

ForwardResult forward(EncoderParams& enc, const Matrix& x, Mode mode) {
  return forward_impl(enc, x, mode, mode == Mode::Train ? &enc : nullptr);
}

Matrix forward_eval(const EncoderParams& enc, const Matrix& x) { return forward_impl(enc, x, Mode::Eval, nullptr).z; }

EncoderGrads backward(const EncoderParams& enc, const ForwardCache& cache, const Matrix& grad_z) {
  if (cache.owner != &enc || cache.version != enc.version || cache.layers.size() != enc.hidden.size()) {
    throw Error(ErrorCode::CacheMismatch, "forward cache does not match the encoder state");
  }
  if (grad_z.rows() != cache.last_hidden.rows() || grad_z.cols() != enc.d_z) {
    throw Error(ErrorCode::InvalidShape, "upstream gradient shape mismatch");
  }
  const double n = static_cast<double>(grad_z.rows());
  EncoderGrads grads;
  grads.tensors.resize(4 * enc.hidden.size() + 2);

  grads.tensors[4 * enc.hidden.size()] = cache.last_hidden.transpose() * grad_z;
  grads.tensors[4 * enc.hidden.size() + 1] = grad_z.colwise().sum();
  Matrix dh = grad_z * enc.out_weight.transpose();

  for (std::size_t k = enc.hidden.size(); k-- > 0;) {
    const HiddenLayer& l = enc.hidden[k];
    const LayerCache& c = cache.layers[k];
    const double sl = enc.slope;
    const Matrix dy = dh.array() * (sl + (1.0 - sl) * (c.y.array() >= 0.0).cast<double>());
    grads.tensors[4 * k + 2] = (dy.array() * c.xhat.array()).colwise().sum();
    grads.tensors[4 * k + 3] = dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * l.gamma.row(0).array();
    Matrix da;
    if (cache.mode == Mode::Train) {
      const Matrix mean_dxhat = dxhat.colwise().sum() / n;
      const Matrix mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum() / n;
      da = dxhat - (c.xhat.array().rowwise() * mean_dxhat_xhat.row(0).array()).matrix();
      da.rowwise() -= mean_dxhat.row(0);
      da = da.array().rowwise() * c.inv_std.row(0).array();
    } else {
      da = dxhat.array().rowwise() * c.inv_std.row(0).array();
    }
    grads.tensors[4 * k] = c.input.transpose() * da;
    grads.tensors[4 * k + 1] = da.colwise().sum();
    Matrix dinput = da * l.weight.transpose();
    if (l.residual) dinput += dh;
    dh = std::move(dinput);
  }
  return grads;
}

Matrix whiten_outputs(const Matrix& z, double epsilon) {
  if (z.rows() <= z.cols()) throw Error(ErrorCode::InsufficientSamples, "whitening needs n > d_Z");
  if (!z.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite latent");
  const Matrix zc = center_columns(z);
  const Matrix cov = sample_cov(zc, zc);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < 1e-10) {
    throw Error(ErrorCode::IllConditioned, "latent covariance is singular (encoder collapse)");
  }
  return zc * inverse_sqrt_psd(cov, epsilon);
}

nlohmann::json to_json(const EncoderParams& enc) {
  nlohmann::json layers = nlohmann::json::array();
  for (const HiddenLayer& l : enc.hidden) {
    layers.push_back({{"weight", matrix_to_json(l.weight)},
                      {"bias", matrix_to_json(l.bias)},
                      {"gamma", matrix_to_json(l.gamma)},
                      {"beta", matrix_to_json(l.beta)},
                      {"running_mean", matrix_to_json(l.running_mean)},
                      {"running_var", matrix_to_json(l.running_var)},
                      {"residual", l.residual}});
  }
  return {{"d_in", enc.d_in},
          {"d_Z", enc.d_z},
          {"seed", enc.seed},
          {"slope", enc.slope},
          {"norm_momentum", enc.norm_momentum},
          {"norm_eps", enc.norm_eps},
          {"hidden", layers},
          {"out_weight", matrix_to_json(enc.out_weight)},
          {"out_bias", matrix_to_json(enc.out_bias)}};
}

EncoderParams encoder_from_json(const nlohmann::json& j) {
  EncoderParams enc;
  enc.d_in = j.at("d_in").get<int>();
  enc.d_z = j.at("d_Z").get<int>();
  enc.seed = j.at("seed").get<std::uint64_t>();
  enc.slope = j.at("slope").get<double>();
  enc.norm_momentum = j.at("norm_momentum").get<double>();
  enc.norm_eps = j.at("norm_eps").get<double>();
  for (const auto& lj : j.at("hidden")) {
    HiddenLayer l;
    l.weight = matrix_from_json(lj.at("weight"));
    l.bias = matrix_from_json(lj.at("bias"));
    l.gamma = matrix_from_json(lj.at("gamma"));
    l.beta = matrix_from_json(lj.at("beta"));
    l.running_mean = matrix_from_json(lj.at("running_mean"));
    l.running_var = matrix_from_json(lj.at("running_var"));
    l.residual = lj.at("residual").get<bool>();
    enc.hidden.push_back(std::move(l));
  }
  enc.out_weight = matrix_from_json(j.at("out_weight"));
  enc.out_bias = matrix_from_json(j.at("out_bias"));
  return enc;
}

}  // namespace ncca
