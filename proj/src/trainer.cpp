#include "ncca/trainer.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "ncca/cca_core.hpp"
#include "ncca/error.hpp"
#include "ncca/json_io.hpp"
#include "ncca/rng.hpp"

namespace ncca {

namespace {

enum SeedTag : std::uint64_t { kData = 1, kEncoderF = 2, kEncoderFp = 3, kEval = 4, kDataset = 5, kShuffle = 6 };

Matrix apply_map(const std::optional<DecoderParams>& g, const Matrix& s) { return g ? decode(*g, s) : s; }

int input_dim(const std::optional<DecoderParams>& g, const LatentSpec& spec) { return g ? g->d_x : spec.d_s; }

void validate(const TrainConfig& cfg, const LatentSpec& spec, const ViewMaps& maps) {
  if (cfg.steps < 0) throw Error(ErrorCode::ConfigError, "steps must be >= 0");
  if (cfg.batch_size < 2) throw Error(ErrorCode::InsufficientBatch, "batch size must be >= 2");
  if (cfg.d_z < 1) throw Error(ErrorCode::InvalidDimension, "d_Z must be >= 1");
  if (!(cfg.adam.lr > 0.0)) throw Error(ErrorCode::ConfigError, "learning rate must be positive");
  if (cfg.sampling == Sampling::FixedDataset && cfg.dataset_size < 2) {
    throw Error(ErrorCode::ConfigError, "fixed dataset needs at least two samples");
  }
  for (const auto* g : {&maps.g, &maps.g_prime}) {
    if (*g && (*g)->d_s != spec.d_s) throw Error(ErrorCode::InvalidShape, "decoder input must match d_S");
  }
}

}  // namespace

AdamState init_adam(const EncoderParams& enc) {
  AdamState st;
  for (const Matrix* p : enc.parameters()) {
    st.m.push_back(Matrix::Zero(p->rows(), p->cols()));
    st.v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  return st;
}

void adam_step(EncoderParams& enc, AdamState& st, const EncoderGrads& grads, const AdamConfig& cfg) {
  const std::vector<Matrix*> params = enc.parameters();
  if (grads.tensors.size() != params.size() || st.m.size() != params.size()) {
    throw Error(ErrorCode::InvalidShape, "Adam state does not match the encoder");
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads.tensors[i];
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g.cwiseAbs2();
    params[i]->array() += cfg.lr * (st.m[i].array() / c1) / ((st.v[i].array() / c2).sqrt() + cfg.eps);
  }
  ++enc.version;
}

double EpsilonPolicy::at(std::int64_t n_samples) const {
  if (kind == Kind::Fixed) return value;
  return scale * std::pow(static_cast<double>(n_samples), exponent);
}

EvalBatch make_eval_batch(const LatentSpec& spec, const ViewMaps& maps, std::int64_t n, std::uint64_t seed) {
  EvalBatch b;
  b.sources = sample_source_pair(spec, n, seed);
  b.x = apply_map(maps.g, b.sources.s);
  b.x_prime = apply_map(maps.g_prime, b.sources.s_prime);
  return b;
}

EvalLatents encode_eval(const EncoderParams& f, const EncoderParams& fp, const EvalBatch& batch, double epsilon) {
  EvalLatents lat;
  lat.z = whiten_outputs(forward_eval(f, batch.x), epsilon);
  lat.z_prime = whiten_outputs(forward_eval(fp, batch.x_prime), epsilon);
  lat.singulars = singular_values(sample_cov(lat.z, lat.z_prime));
  return lat;
}

MetricsReport evaluate_latents(const EvalLatents& lat, const SourceBatch& sources, const Vector& sigma_ref) {
  MetricsReport rep;
  rep.f.r2 = r_squared(sources.s, lat.z);
  rep.fprime.r2 = r_squared(sources.s_prime, lat.z_prime);
  rep.f.pa = principal_angles(lat.z, sources.s);
  rep.fprime.pa = principal_angles(lat.z_prime, sources.s_prime);
  if (lat.z.cols() == sources.s.cols()) {
    rep.orbit_f = view_orbit_distance(lat.z, sources.s);
    rep.orbit_fprime = view_orbit_distance(lat.z_prime, sources.s_prime);
    rep.orbit_distance = rep.orbit_f + rep.orbit_fprime;
  } else {
    rep.orbit_f = rep.orbit_fprime = rep.orbit_distance = std::numeric_limits<double>::quiet_NaN();
  }
  rep.sigma_gap_linf = singular_gap_linf(lat.singulars, sigma_ref);
  return rep;
}

CcaTrainer::CcaTrainer(const TrainConfig& cfg, const LatentSpec& spec, ViewMaps maps)
    : cfg_(cfg), spec_(spec), maps_(std::move(maps)) {
  tune_allocator();
  validate(cfg_, spec_, maps_);
  f_ = init_encoder(input_dim(maps_.g, spec_), cfg_.d_z, cfg_.hidden_widths, derive_seed(cfg_.seed, kEncoderF));
  fp_ = init_encoder(input_dim(maps_.g_prime, spec_), cfg_.d_z, cfg_.hidden_widths,
                     derive_seed(cfg_.seed, kEncoderFp));
  adam_f_ = init_adam(f_);
  adam_fp_ = init_adam(fp_);
  if (cfg_.sampling == Sampling::FixedDataset) {
    const SourceBatch data = sample_source_pair(spec_, cfg_.dataset_size, derive_seed(cfg_.seed, kDataset));
    data_x_ = apply_map(maps_.g, data.s);
    data_xp_ = apply_map(maps_.g_prime, data.s_prime);
    order_.resize(static_cast<std::size_t>(cfg_.dataset_size));
    cursor_ = order_.size();  // forces a shuffle on first use
    epsilon_ = cfg_.epsilon.at(cfg_.dataset_size);
  } else {
    epsilon_ = cfg_.epsilon.at(cfg_.batch_size);
  }
}

void CcaTrainer::next_batch(Matrix& x, Matrix& xp) {
  if (cfg_.sampling == Sampling::Online) {
    const SourceBatch b = sample_source_pair(spec_, cfg_.batch_size, derive_seed(derive_seed(cfg_.seed, kData), step_));
    x = apply_map(maps_.g, b.s);
    xp = apply_map(maps_.g_prime, b.s_prime);
    return;
  }
  const auto batch = static_cast<std::size_t>(std::min<std::int64_t>(cfg_.batch_size, cfg_.dataset_size));
  if (cursor_ + batch > order_.size()) {
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    CounterRng rng(derive_seed(cfg_.seed, kShuffle), epoch_++);
    for (std::size_t i = order_.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1));
      std::swap(order_[i], order_[std::min(j, i)]);
    }
    cursor_ = 0;
  }
  x.resize(static_cast<Eigen::Index>(batch), data_x_.cols());
  xp.resize(static_cast<Eigen::Index>(batch), data_xp_.cols());
  for (std::size_t r = 0; r < batch; ++r) {
    x.row(static_cast<Eigen::Index>(r)) = data_x_.row(order_[cursor_ + r]);
    xp.row(static_cast<Eigen::Index>(r)) = data_xp_.row(order_[cursor_ + r]);
  }
  cursor_ += batch;
}

void CcaTrainer::step() {
  Matrix x, xp;
  next_batch(x, xp);
  ForwardResult out_f = forward(f_, x, Mode::Train);
  ForwardResult out_fp = forward(fp_, xp, Mode::Train);
  if (!out_f.z.allFinite() || !out_fp.z.allFinite()) {
    throw Error(ErrorCode::DivergedTraining, "non-finite encoder output at step " + std::to_string(step_));
  }
  const CcaStats stats = empirical_cross_stats(out_f.z, out_fp.z, epsilon_);
  const double j = cca_objective(stats);
  if (!std::isfinite(j)) throw Error(ErrorCode::DivergedTraining, "non-finite objective at step " + std::to_string(step_));
  const CcaGradient grad = cca_gradient(stats);
  const EncoderGrads gf = backward(f_, out_f.cache, grad.g);
  const EncoderGrads gfp = backward(fp_, out_fp.cache, grad.gp);
  adam_step(f_, adam_f_, gf, cfg_.adam);
  adam_step(fp_, adam_fp_, gfp, cfg_.adam);

  ++step_;
  last_j_ = j;
  last_sigmas_ = stats.singulars;
  history_.j_trace.push_back(j);
  if (cfg_.eval_every > 0 && (step_ % cfg_.eval_every == 0 || step_ == cfg_.steps)) record_eval();
}

void CcaTrainer::run() {
  while (step_ < cfg_.steps) step();
}

void CcaTrainer::record_eval() {
  if (!eval_) eval_ = make_eval_batch(spec_, maps_, cfg_.eval_samples, derive_seed(cfg_.seed, kEval));
  HistoryRow row;
  row.step = step_;
  row.j_hat = last_j_;
  row.sigmas = last_sigmas_;
  try {
    const EvalLatents lat = encode_eval(f_, fp_, *eval_, cfg_.eval_epsilon);
    const MetricsReport rep = evaluate_latents(lat, eval_->sources, lat.singulars);
    row.r2_f = rep.f.r2.mean;
    row.r2_fprime = rep.fprime.r2.mean;
    row.orbit_distance = rep.orbit_distance;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::IllConditioned && e.code() != ErrorCode::RankDeficientSpan) throw;
    row.r2_f = row.r2_fprime = row.orbit_distance = std::numeric_limits<double>::quiet_NaN();
  }
  history_.rows.push_back(std::move(row));
}

TrainResult train_cca(const TrainConfig& cfg, const LatentSpec& spec, const ViewMaps& maps) {
  CcaTrainer trainer(cfg, spec, maps);
  trainer.run();
  return {trainer.f(), trainer.f_prime(), trainer.history()};
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"steps", cfg.steps},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.adam.lr},
          {"beta1", cfg.adam.beta1},
          {"beta2", cfg.adam.beta2},
          {"adam_eps", cfg.adam.eps},
          {"epsilon", cfg.epsilon.kind == EpsilonPolicy::Kind::Fixed ? nlohmann::json(cfg.epsilon.value)
                                                                     : nlohmann::json("schedule")},
          {"epsilon_scale", cfg.epsilon.scale},
          {"epsilon_exponent", cfg.epsilon.exponent},
          {"sampling", cfg.sampling == Sampling::Online ? "online" : "fixed_dataset"},
          {"dataset_size", cfg.dataset_size},
          {"seed", cfg.seed},
          {"d_Z", cfg.d_z},
          {"hidden_widths", cfg.hidden_widths},
          {"eval_every", cfg.eval_every},
          {"eval_samples", cfg.eval_samples},
          {"eval_epsilon", cfg.eval_epsilon}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.steps = j.at("steps");
  cfg.batch_size = j.at("batch_size");
  cfg.adam.lr = j.at("lr");
  cfg.adam.beta1 = j.at("beta1");
  cfg.adam.beta2 = j.at("beta2");
  cfg.adam.eps = j.at("adam_eps");
  if (j.at("epsilon").is_string()) {
    cfg.epsilon.kind = EpsilonPolicy::Kind::SampleSize;
  } else {
    cfg.epsilon.value = j.at("epsilon");
  }
  cfg.epsilon.scale = j.at("epsilon_scale");
  cfg.epsilon.exponent = j.at("epsilon_exponent");
  cfg.sampling = j.at("sampling") == "online" ? Sampling::Online : Sampling::FixedDataset;
  cfg.dataset_size = j.at("dataset_size");
  cfg.seed = j.at("seed");
  cfg.d_z = j.at("d_Z");
  cfg.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
  cfg.eval_every = j.at("eval_every");
  cfg.eval_samples = j.at("eval_samples");
  cfg.eval_epsilon = j.at("eval_epsilon");
  return cfg;
}

nlohmann::json checkpoint_json(const CcaTrainer& trainer, const std::string& config_hash) {
  auto adam = [](const AdamState& st) {
    nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
    for (const Matrix& x : st.m) m.push_back(matrix_to_json(x));
    for (const Matrix& x : st.v) v.push_back(matrix_to_json(x));
    return nlohmann::json{{"step", st.step}, {"m", m}, {"v", v}};
  };
  return {{"config_hash", config_hash},
          {"train_config", to_json(trainer.config())},
          {"step", trainer.steps_done()},
          {"epsilon", trainer.epsilon()},
          {"encoder_f", to_json(trainer.f())},
          {"encoder_fprime", to_json(trainer.f_prime())},
          {"adam_f", adam(trainer.adam_f())},
          {"adam_fprime", adam(trainer.adam_f_prime())}};
}

}  // namespace ncca
