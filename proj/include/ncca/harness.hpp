#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncca/latent_model.hpp"
#include "ncca/trainer.hpp"

namespace ncca {

enum class Experiment {
  Identifiability,
  ReparamInvariance,
  Consistency,
  AblateSourceDim,
  AblateDominance,
  AblateDimMismatch,
  OracleCheck,
};

std::string_view to_string(Experiment e);
Experiment experiment_from_string(std::string_view name);

/// Everything needed to reproduce one experiment. Unset dimensions
/// (d_X = 0, d_Z = 0) resolve to 4 * d_S and d_S.
struct ExperimentConfig {
  Experiment experiment = Experiment::Identifiability;
  std::vector<Family> families{Family::Gaussian};
  int d_s = 5;
  std::vector<double> rho;  // empty: equally spaced on [rho_low, rho_high]
  double rho_low = 0.85;
  double rho_high = 0.90;
  FamilyParams family_params;
  int d_x = 0;
  int decoder_depth = 3;
  double cond_limit = 4.0;
  int d_z = 0;
  TrainConfig trainer;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  Sampling sampling = Sampling::Online;
  std::vector<std::int64_t> dataset_sizes{1000, 10000, 100000};
  std::vector<double> sweep;  // ablation axis: d_S, dominance ratio or d_Z
  std::int64_t eval_samples = 100000;
  int max_degree = 4;
  int oracle_trials = 1000;
  std::string output_dir = "results";
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Throws ConfigError or WrongExperiment for invalid combinations.
void validate(const ExperimentConfig& cfg);

/// FNV-1a of the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// Correlations for a target dominance ratio rho_min / rho_max^2:
/// rho_max = min(0.9, 0.95 / ratio), rho_min = ratio * rho_max^2, equally spaced.
std::vector<double> rho_for_dominance_ratio(int d, double ratio);

/// One results.csv row. orbit_f / orbit_fprime / pa profiles are kept
/// in memory for tests and summaries; the CSV carries the fixed columns.
struct ReportRow {
  std::string experiment;
  std::string family;
  int d_s = 0;
  int d_z = 0;
  std::uint64_t seed = 0;
  double sweep_value = 0.0;
  double r2_f = 0.0;
  double r2_fprime = 0.0;
  double pa_mean_f = 0.0;
  double pa_max_f = 0.0;
  double pa_mean_fprime = 0.0;
  double pa_max_fprime = 0.0;
  double orbit_distance = 0.0;
  double sigma_gap_linf = 0.0;
  double j_hat_final = 0.0;
  int steps = 0;
  double wall_clock_s = 0.0;

  double orbit_f = 0.0;
  double orbit_fprime = 0.0;
  std::vector<double> pa_profile_f;
  bool failed = false;
  std::string error;
};

inline const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols{
      "experiment", "family",       "d_S",           "d_Z",         "seed",           "sweep_value",
      "r2_f",       "r2_fprime",    "pa_mean_f",     "pa_max_f",    "pa_mean_fprime", "pa_max_fprime",
      "orbit_distance", "sigma_gap_linf", "J_hat_final", "steps",   "wall_clock_s"};
  return cols;
}

/// Reparameterization trace: observation-space vs source-space encoders.
/// File stem shared by a row's history, trace and checkpoint files.
std::string run_label(const ReportRow& row);

struct ReparamTracePoint {
  int step = 0;
  double sigma_gap = 0.0;
  double orbit_f = 0.0;
  double orbit_fprime = 0.0;
};

struct RunRecord {
  std::string label;  // file stem, e.g. gaussian_sweep5_seed0
  int d_z = 0;
  TrainingHistory history;
  std::vector<ReparamTracePoint> reparam_trace;
  nlohmann::json checkpoint;  // null when not kept
};

struct MetricAggregate {
  double mean = 0.0;
  double std = 0.0;
  int count = 0;
};

struct GroupAggregate {
  std::string family;
  int d_s = 0;
  int d_z = 0;
  double sweep_value = 0.0;
  std::map<std::string, MetricAggregate> metrics;
};

struct OracleCheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ReportBundle {
  std::string experiment;
  std::string config_hash;
  nlohmann::json config;
  std::vector<ReportRow> rows;
  std::vector<RunRecord> runs;
  std::vector<OracleCheckResult> checks;
  std::vector<std::pair<std::string, std::string>> extra_files;  // (file name, contents)
  std::int64_t eval_samples = 0;
  double wall_clock_s = 0.0;

  bool all_checks_pass() const;
};

/// Mean and sample standard deviation per metric over successful rows,
/// grouped by (family, d_S, d_Z, sweep_value) in first-appearance order.
std::vector<GroupAggregate> aggregate(const std::vector<ReportRow>& rows);

/// Sweep axis after defaults: {2, 5, 8} for d_S, {0.5, 0.8, 1.2, 1.5} for the
/// dominance ratio, {3, 7} for d_Z; dataset sizes for consistency.
std::vector<double> effective_sweep(const ExperimentConfig& cfg);

/// Spec for one sweep point of the config.
LatentSpec spec_for(const ExperimentConfig& cfg, Family family, double sweep_value);

/// Independent decoders g, g' for one run; deterministic in (config, seed).
ViewMaps make_view_maps(const ExperimentConfig& cfg, const LatentSpec& spec, std::uint64_t seed);

/// Trainer settings for one run of the config.
TrainConfig train_config_for(const ExperimentConfig& cfg, const LatentSpec& spec, std::uint64_t seed,
                             double sweep_value);

/// Final identifiability metrics of a trained pair on a fresh evaluation batch.
MetricsReport evaluate_pair(const ExperimentConfig& cfg, const LatentSpec& spec, const ViewMaps& maps,
                            const EncoderParams& f, const EncoderParams& fp, std::uint64_t seed, int d_z);

ReportBundle run_experiment(const ExperimentConfig& cfg);

/// Over/under-complete sweep; rejects d_Z == d_S with WrongExperiment.
ReportBundle run_dim_mismatch(const ExperimentConfig& cfg);

/// Largest |E_hat[h_m(s) h_n(s')] - delta_mn rho^n| over m, n <= max_n from a
/// Monte Carlo draw of standard bivariate normal pairs. The univariate Hermite
/// polynomials of each margin (known mean zero) serve as regression control
/// variates.
double mehler_mc_max_error(double rho, int max_n, std::int64_t samples, std::uint64_t seed);

/// Population-oracle invariant suite (equivalence certificate, Mehler law,
/// Hermite orthonormality, ceiling consistency).
std::vector<OracleCheckResult> run_oracle_suite(int trials, int max_degree, std::uint64_t seed);

/// Writes results.csv, summary.json and one history CSV per run.
void emit_report(const ReportBundle& bundle, const std::filesystem::path& output_dir);

struct LoadedReport {
  std::vector<ReportRow> rows;
  std::vector<GroupAggregate> aggregates;  // recomputed from rows
  nlohmann::json summary;
};

/// Reads results.csv and summary.json back; throws IoError when the stored
/// aggregates differ from a recomputation over the rows.
LoadedReport load_report(const std::filesystem::path& output_dir);

std::string results_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_results_csv(const std::string& text);
std::string history_csv(const RunRecord& run);

}  // namespace ncca
