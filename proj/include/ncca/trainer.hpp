#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncca/encoder.hpp"
#include "ncca/latent_model.hpp"
#include "ncca/metrics.hpp"
#include "ncca/mixing.hpp"

namespace ncca {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments shape-congruent with one encoder's parameter list.
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;
};

AdamState init_adam(const EncoderParams& enc);

/// One ascent step on the objective (parameters move along +grad).
void adam_step(EncoderParams& enc, AdamState& state, const EncoderGrads& grads, const AdamConfig& cfg);

/// Ridge parameter either fixed or 0.01 * n^(-1/4) in the dataset size n.
struct EpsilonPolicy {
  enum class Kind { Fixed, SampleSize };
  Kind kind = Kind::Fixed;
  double value = 1e-3;
  double scale = 0.01;
  double exponent = -0.25;

  double at(std::int64_t n_samples) const;
};

enum class Sampling { Online, FixedDataset };

struct TrainConfig {
  int steps = 20000;
  int batch_size = 1024;
  AdamConfig adam;
  EpsilonPolicy epsilon;
  Sampling sampling = Sampling::Online;
  std::int64_t dataset_size = 0;  // FixedDataset only
  std::uint64_t seed = 0;
  int d_z = 0;
  std::vector<int> hidden_widths{64, 64};
  int eval_every = 1000;
  std::int64_t eval_samples = 10000;
  double eval_epsilon = 1e-8;
};

struct HistoryRow {
  int step = 0;
  double j_hat = 0.0;
  Vector sigmas;
  double r2_f = 0.0;
  double r2_fprime = 0.0;
  double orbit_distance = 0.0;  // NaN when d_Z != d_S
};

struct TrainingHistory {
  std::vector<HistoryRow> rows;
  std::vector<double> j_trace;  // objective of every step's batch
};

/// Observation-space maps for both views; nullopt means the encoder sees the
/// sources directly (source-space training).
struct ViewMaps {
  std::optional<DecoderParams> g;
  std::optional<DecoderParams> g_prime;
};

struct EvalBatch {
  SourceBatch sources;
  Matrix x;
  Matrix x_prime;
};

EvalBatch make_eval_batch(const LatentSpec& spec, const ViewMaps& maps, std::int64_t n, std::uint64_t seed);

/// Whitened latents of both encoders on an evaluation batch.
struct EvalLatents {
  Matrix z;
  Matrix z_prime;
  Vector singulars;  // canonical correlations of the whitened pair
};

EvalLatents encode_eval(const EncoderParams& f, const EncoderParams& fp, const EvalBatch& batch, double epsilon);

/// Identifiability metrics of whitened latents against the true sources.
/// Orbit distances are NaN when d_Z != d_S; the singular-value gap is taken
/// against `sigma_ref`.
MetricsReport evaluate_latents(const EvalLatents& lat, const SourceBatch& sources, const Vector& sigma_ref);

/// Stepwise nonlinear CCA trainer for one encoder pair. Deterministic per seed.
class CcaTrainer {
 public:
  CcaTrainer(const TrainConfig& cfg, const LatentSpec& spec, ViewMaps maps);

  /// One sample -> decode -> forward -> gradient -> backward -> Adam step.
  /// Throws DivergedTraining on a non-finite objective.
  void step();
  void run();

  int steps_done() const { return step_; }
  double epsilon() const { return epsilon_; }
  const EncoderParams& f() const { return f_; }
  const EncoderParams& f_prime() const { return fp_; }
  const AdamState& adam_f() const { return adam_f_; }
  const AdamState& adam_f_prime() const { return adam_fp_; }
  const TrainingHistory& history() const { return history_; }
  const TrainConfig& config() const { return cfg_; }
  const ViewMaps& maps() const { return maps_; }
  const Vector& last_singulars() const { return last_sigmas_; }

 private:
  void next_batch(Matrix& x, Matrix& xp);
  void record_eval();

  TrainConfig cfg_;
  LatentSpec spec_;
  ViewMaps maps_;
  EncoderParams f_, fp_;
  AdamState adam_f_, adam_fp_;
  double epsilon_ = 0.0;
  int step_ = 0;
  TrainingHistory history_;
  Vector last_sigmas_;
  double last_j_ = 0.0;
  std::optional<EvalBatch> eval_;
  // FixedDataset state
  Matrix data_x_, data_xp_;
  std::vector<Eigen::Index> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

struct TrainResult {
  EncoderParams f;
  EncoderParams f_prime;
  TrainingHistory history;
};

TrainResult train_cca(const TrainConfig& cfg, const LatentSpec& spec, const ViewMaps& maps);

/// Checkpoint: both encoders, Adam states, step, config and its hash.
nlohmann::json checkpoint_json(const CcaTrainer& trainer, const std::string& config_hash);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace ncca
