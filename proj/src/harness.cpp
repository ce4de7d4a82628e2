#include "ncca/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "ncca/error.hpp"
#include "ncca/json_io.hpp"
#include "ncca/population_oracle.hpp"
#include "ncca/rng.hpp"

namespace ncca {

namespace {

using nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum HarnessTag : std::uint64_t { kDecoderG = 11, kDecoderGp = 12, kFinalEval = 21, kTrace = 22, kOracle = 31 };

struct ExperimentName {
  Experiment e;
  const char* name;
};

constexpr ExperimentName kExperimentNames[] = {
    {Experiment::Identifiability, "identifiability"},
    {Experiment::ReparamInvariance, "reparam_invariance"},
    {Experiment::Consistency, "consistency"},
    {Experiment::AblateSourceDim, "ablate_source_dim"},
    {Experiment::AblateDominance, "ablate_dominance"},
    {Experiment::AblateDimMismatch, "ablate_dim_mismatch"},
    {Experiment::OracleCheck, "oracle_check"},
};

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; })) {
      config_error("unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  // Shortest text that parses back to the same double.
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json json_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from_json(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::string sweep_tag(double v) {
  std::string s = fmt_double(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

int dz_for(const ExperimentConfig& cfg, int d_s, double sweep_value) {
  if (cfg.experiment == Experiment::AblateDimMismatch) return static_cast<int>(sweep_value);
  if (cfg.experiment == Experiment::AblateSourceDim) return d_s;
  return cfg.d_z > 0 ? cfg.d_z : d_s;
}

int dx_for(const ExperimentConfig& cfg, int d_s) { return cfg.d_x > 0 ? cfg.d_x : 4 * d_s; }

void fill_metrics(ReportRow& row, const MetricsReport& rep) {
  row.r2_f = rep.f.r2.mean;
  row.r2_fprime = rep.fprime.r2.mean;
  row.pa_mean_f = rep.f.pa.mean;
  row.pa_max_f = rep.f.pa.max;
  row.pa_mean_fprime = rep.fprime.pa.mean;
  row.pa_max_fprime = rep.fprime.pa.max;
  row.orbit_distance = rep.orbit_distance;
  row.orbit_f = rep.orbit_f;
  row.orbit_fprime = rep.orbit_fprime;
  row.sigma_gap_linf = rep.sigma_gap_linf;
  row.pa_profile_f = to_std(rep.f.pa.degrees);
}

void mark_failed(ReportRow& row, const Error& e) {
  row.failed = true;
  row.error = std::string(to_string(e.code())) + ": " + e.what();
  for (double* v : {&row.r2_f, &row.r2_fprime, &row.pa_mean_f, &row.pa_max_f, &row.pa_mean_fprime,
                    &row.pa_max_fprime, &row.orbit_distance, &row.sigma_gap_linf, &row.j_hat_final,
                    &row.orbit_f, &row.orbit_fprime}) {
    *v = kNaN;
  }
  row.pa_profile_f.clear();
}

// Per-seed failures that must not abort the bundle.
bool isolatable(ErrorCode c) {
  return c == ErrorCode::DivergedTraining || c == ErrorCode::IllConditioned || c == ErrorCode::RankDeficientSpan ||
         c == ErrorCode::DegenerateTarget;
}

ReportRow base_row(const ExperimentConfig& cfg, const LatentSpec& spec, std::uint64_t seed, double sweep_value,
                   int d_z) {
  ReportRow row;
  row.experiment = std::string(to_string(cfg.experiment));
  row.family = std::string(to_string(spec.family));
  row.d_s = spec.d_s;
  row.d_z = d_z;
  row.seed = seed;
  row.sweep_value = sweep_value;
  return row;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Train one encoder pair and evaluate it against the true sources.
void run_single(const ExperimentConfig& cfg, Family family, double sweep_value, std::uint64_t seed,
                const std::string& hash, ReportBundle& bundle) {
  const auto t0 = std::chrono::steady_clock::now();
  const LatentSpec spec = spec_for(cfg, family, sweep_value);
  const int d_z = dz_for(cfg, spec.d_s, sweep_value);
  ReportRow row = base_row(cfg, spec, seed, sweep_value, d_z);
  RunRecord rec;
  rec.label = run_label(row);
  rec.d_z = d_z;

  const ViewMaps maps = make_view_maps(cfg, spec, seed);
  const TrainConfig tc = train_config_for(cfg, spec, seed, sweep_value);
  std::unique_ptr<CcaTrainer> trainer;
  try {
    trainer = std::make_unique<CcaTrainer>(tc, spec, maps);
    trainer->run();
    const MetricsReport rep = evaluate_pair(cfg, spec, maps, trainer->f(), trainer->f_prime(), seed, d_z);
    fill_metrics(row, rep);
    row.j_hat_final = trainer->history().j_trace.empty() ? kNaN : trainer->history().j_trace.back();
    rec.checkpoint = checkpoint_json(*trainer, hash);
  } catch (const Error& e) {
    if (!isolatable(e.code())) throw;
    mark_failed(row, e);
  }
  if (trainer) {
    row.steps = trainer->steps_done();
    rec.history = trainer->history();
  }
  row.wall_clock_s = seconds_since(t0);
  bundle.rows.push_back(std::move(row));
  bundle.runs.push_back(std::move(rec));
}

// Observation-space and source-space pairs stepped in lockstep on the same
// source stream; the trace compares the two pairs view by view.
void run_reparam(const ExperimentConfig& cfg, Family family, std::uint64_t seed, const std::string& hash,
                 ReportBundle& bundle) {
  const auto t0 = std::chrono::steady_clock::now();
  const LatentSpec spec = spec_for(cfg, family, 0.0);
  const int d_z = dz_for(cfg, spec.d_s, 0.0);
  ReportRow row = base_row(cfg, spec, seed, 0.0, d_z);
  RunRecord rec, rec_src;
  rec.label = run_label(row);
  rec_src.label = rec.label + "_source";
  rec.d_z = rec_src.d_z = d_z;

  const ViewMaps maps = make_view_maps(cfg, spec, seed);
  const TrainConfig tc = train_config_for(cfg, spec, seed, 0.0);
  std::unique_ptr<CcaTrainer> obs, src;

  auto compare = [&](const EvalBatch& b_obs, const EvalBatch& b_src, ReparamTracePoint& pt) {
    const EvalLatents lo = encode_eval(obs->f(), obs->f_prime(), b_obs, tc.eval_epsilon);
    const EvalLatents ls = encode_eval(src->f(), src->f_prime(), b_src, tc.eval_epsilon);
    pt.sigma_gap = singular_gap_linf(lo.singulars, ls.singulars);
    pt.orbit_f = view_orbit_distance(ls.z, lo.z);
    pt.orbit_fprime = view_orbit_distance(ls.z_prime, lo.z_prime);
    return lo;
  };

  try {
    obs = std::make_unique<CcaTrainer>(tc, spec, maps);
    src = std::make_unique<CcaTrainer>(tc, spec, ViewMaps{});
    const std::uint64_t trace_seed = derive_seed(seed, kTrace);
    const EvalBatch t_obs = make_eval_batch(spec, maps, tc.eval_samples, trace_seed);
    const EvalBatch t_src = make_eval_batch(spec, ViewMaps{}, tc.eval_samples, trace_seed);
    while (obs->steps_done() < tc.steps) {
      obs->step();
      src->step();
      const int k = obs->steps_done();
      if (tc.eval_every > 0 && (k % tc.eval_every == 0 || k == tc.steps)) {
        ReparamTracePoint pt;
        pt.step = k;
        try {
          compare(t_obs, t_src, pt);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::IllConditioned) throw;
          pt.sigma_gap = pt.orbit_f = pt.orbit_fprime = kNaN;
        }
        rec.reparam_trace.push_back(pt);
      }
    }
    const std::uint64_t eval_seed = derive_seed(seed, kFinalEval);
    const EvalBatch f_obs = make_eval_batch(spec, maps, cfg.eval_samples, eval_seed);
    const EvalBatch f_src = make_eval_batch(spec, ViewMaps{}, cfg.eval_samples, eval_seed);
    ReparamTracePoint fin;
    const EvalLatents lo = compare(f_obs, f_src, fin);
    const EvalLatents ls = encode_eval(src->f(), src->f_prime(), f_src, tc.eval_epsilon);
    fill_metrics(row, evaluate_latents(lo, f_obs.sources, ls.singulars));
    row.orbit_f = fin.orbit_f;
    row.orbit_fprime = fin.orbit_fprime;
    row.orbit_distance = fin.orbit_f + fin.orbit_fprime;
    row.sigma_gap_linf = fin.sigma_gap;
    row.j_hat_final = obs->history().j_trace.empty() ? kNaN : obs->history().j_trace.back();
    rec.checkpoint = checkpoint_json(*obs, hash);
    rec_src.checkpoint = checkpoint_json(*src, hash);
  } catch (const Error& e) {
    if (!isolatable(e.code())) throw;
    mark_failed(row, e);
  }
  if (obs) {
    row.steps = obs->steps_done();
    rec.history = obs->history();
  }
  if (src) rec_src.history = src->history();
  row.wall_clock_s = seconds_since(t0);
  bundle.rows.push_back(std::move(row));
  bundle.runs.push_back(std::move(rec));
  bundle.runs.push_back(std::move(rec_src));
}

json aggregates_to_json(const std::vector<GroupAggregate>& groups) {
  json out = json::array();
  for (const GroupAggregate& g : groups) {
    json metrics = json::object();
    for (const auto& [name, a] : g.metrics) {
      metrics[name] = {{"mean", json_number(a.mean)}, {"std", json_number(a.std)}, {"count", a.count}};
    }
    out.push_back({{"family", g.family},
                   {"d_S", g.d_s},
                   {"d_Z", g.d_z},
                   {"sweep_value", json_number(g.sweep_value)},
                   {"metrics", metrics}});
  }
  return out;
}

bool same_number(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double parse_double(const std::string& s) {
  if (s == "nan") return kNaN;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw Error(ErrorCode::IoError, "bad number '" + s + "' in results.csv");
  return v;
}

}  // namespace

std::string run_label(const ReportRow& row) {
  return row.family + "_sweep" + sweep_tag(row.sweep_value) + "_seed" + std::to_string(row.seed);
}

std::string_view to_string(Experiment e) {
  for (const auto& n : kExperimentNames) {
    if (n.e == e) return n.name;
  }
  return "unknown";
}

Experiment experiment_from_string(std::string_view name) {
  for (const auto& n : kExperimentNames) {
    if (name == n.name) return n.e;
  }
  config_error("unknown experiment '" + std::string(name) + "'");
}

std::vector<double> rho_for_dominance_ratio(int d, double ratio) {
  if (d < 2) throw Error(ErrorCode::InvalidDimension, "dominance sweep needs d >= 2");
  if (!(ratio > 0.0)) throw Error(ErrorCode::InvalidCorrelation, "dominance ratio must be positive");
  const double rho_max = std::min(0.9, 0.95 / ratio);
  return equally_spaced_rho(d, ratio * rho_max * rho_max, rho_max);
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    check_keys(j, {"experiment", "latent", "decoder", "encoder", "trainer", "seeds", "sampling", "sweep",
                   "eval_samples", "oracle", "output_dir"},
               "config");
    if (!j.contains("experiment")) config_error("config needs an 'experiment'");
    cfg.experiment = experiment_from_string(j.at("experiment").get<std::string>());
    if (cfg.experiment == Experiment::Consistency) {
      cfg.sampling = Sampling::FixedDataset;
      cfg.trainer.epsilon.kind = EpsilonPolicy::Kind::SampleSize;
    }

    if (j.contains("latent")) {
      const json& l = j.at("latent");
      check_keys(l, {"family", "families", "d_S", "rho", "rho_range", "family_params"}, "latent");
      if (l.contains("family") && l.contains("families")) config_error("give either latent.family or latent.families");
      if (l.contains("family")) cfg.families = {family_from_string(l.at("family").get<std::string>())};
      if (l.contains("families")) {
        cfg.families.clear();
        for (const auto& f : l.at("families")) cfg.families.push_back(family_from_string(f.get<std::string>()));
      }
      read(l, "d_S", cfg.d_s);
      read(l, "rho", cfg.rho);
      if (l.contains("rho_range")) {
        const auto r = l.at("rho_range").get<std::vector<double>>();
        if (r.size() != 2) config_error("latent.rho_range needs [low, high]");
        cfg.rho_low = r[0];
        cfg.rho_high = r[1];
      }
      if (l.contains("family_params")) {
        const json& p = l.at("family_params");
        check_keys(p, {"gamma_total_shape", "poisson_total_rate", "binomial_total_trials", "binomial_p",
                       "hyper_population", "hyper_successes"},
                   "latent.family_params");
        FamilyParams& fp = cfg.family_params;
        read(p, "gamma_total_shape", fp.gamma_total_shape);
        read(p, "poisson_total_rate", fp.poisson_total_rate);
        read(p, "binomial_total_trials", fp.binomial_total_trials);
        read(p, "binomial_p", fp.binomial_p);
        read(p, "hyper_population", fp.hyper_population);
        read(p, "hyper_successes", fp.hyper_successes);
      }
    }
    if (j.contains("decoder")) {
      const json& d = j.at("decoder");
      check_keys(d, {"d_X", "depth", "cond_limit"}, "decoder");
      read(d, "d_X", cfg.d_x);
      read(d, "depth", cfg.decoder_depth);
      read(d, "cond_limit", cfg.cond_limit);
    }
    if (j.contains("encoder")) {
      const json& e = j.at("encoder");
      check_keys(e, {"d_Z", "hidden_widths"}, "encoder");
      read(e, "d_Z", cfg.d_z);
      read(e, "hidden_widths", cfg.trainer.hidden_widths);
    }
    if (j.contains("trainer")) {
      const json& t = j.at("trainer");
      check_keys(t, {"steps", "batch_size", "lr", "epsilon", "eval_every", "history_eval_samples"}, "trainer");
      read(t, "steps", cfg.trainer.steps);
      read(t, "batch_size", cfg.trainer.batch_size);
      read(t, "lr", cfg.trainer.adam.lr);
      read(t, "eval_every", cfg.trainer.eval_every);
      read(t, "history_eval_samples", cfg.trainer.eval_samples);
      if (t.contains("epsilon")) {
        const json& eps = t.at("epsilon");
        if (eps.is_string()) {
          if (eps.get<std::string>() != "schedule") config_error("trainer.epsilon must be a number or \"schedule\"");
          cfg.trainer.epsilon.kind = EpsilonPolicy::Kind::SampleSize;
        } else {
          cfg.trainer.epsilon.kind = EpsilonPolicy::Kind::Fixed;
          cfg.trainer.epsilon.value = eps.get<double>();
        }
      }
    }
    read(j, "seeds", cfg.seeds);
    if (j.contains("sampling")) {
      const json& s = j.at("sampling");
      check_keys(s, {"mode", "n"}, "sampling");
      if (s.contains("mode")) {
        const auto mode = s.at("mode").get<std::string>();
        if (mode == "online") {
          cfg.sampling = Sampling::Online;
        } else if (mode == "fixed_dataset") {
          cfg.sampling = Sampling::FixedDataset;
        } else {
          config_error("sampling.mode must be 'online' or 'fixed_dataset'");
        }
      }
      if (s.contains("n")) {
        const json& n = s.at("n");
        cfg.dataset_sizes = n.is_array() ? n.get<std::vector<std::int64_t>>()
                                         : std::vector<std::int64_t>{n.get<std::int64_t>()};
      }
    }
    read(j, "sweep", cfg.sweep);
    read(j, "eval_samples", cfg.eval_samples);
    if (j.contains("oracle")) {
      const json& o = j.at("oracle");
      check_keys(o, {"trials", "max_degree"}, "oracle");
      read(o, "trials", cfg.oracle_trials);
      read(o, "max_degree", cfg.max_degree);
    }
    read(j, "output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    config_error(std::string("malformed config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    config_error(e.what());
  }
  validate(cfg);
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json families = json::array();
  for (Family f : cfg.families) families.push_back(std::string(to_string(f)));
  const FamilyParams& fp = cfg.family_params;
  json latent = {{"families", families},
                 {"d_S", cfg.d_s},
                 {"rho_range", {cfg.rho_low, cfg.rho_high}},
                 {"family_params",
                  {{"gamma_total_shape", fp.gamma_total_shape},
                   {"poisson_total_rate", fp.poisson_total_rate},
                   {"binomial_total_trials", fp.binomial_total_trials},
                   {"binomial_p", fp.binomial_p},
                   {"hyper_population", fp.hyper_population},
                   {"hyper_successes", fp.hyper_successes}}}};
  if (!cfg.rho.empty()) latent["rho"] = cfg.rho;
  const TrainConfig& t = cfg.trainer;
  json trainer = {{"steps", t.steps},
                  {"batch_size", t.batch_size},
                  {"lr", t.adam.lr},
                  {"eval_every", t.eval_every},
                  {"history_eval_samples", t.eval_samples}};
  trainer["epsilon"] = t.epsilon.kind == EpsilonPolicy::Kind::Fixed ? json(t.epsilon.value) : json("schedule");
  return {{"experiment", std::string(to_string(cfg.experiment))},
          {"latent", latent},
          {"decoder", {{"d_X", cfg.d_x}, {"depth", cfg.decoder_depth}, {"cond_limit", cfg.cond_limit}}},
          {"encoder", {{"d_Z", cfg.d_z}, {"hidden_widths", t.hidden_widths}}},
          {"trainer", trainer},
          {"seeds", cfg.seeds},
          {"sampling",
           {{"mode", cfg.sampling == Sampling::Online ? "online" : "fixed_dataset"}, {"n", cfg.dataset_sizes}}},
          {"sweep", cfg.sweep},
          {"eval_samples", cfg.eval_samples},
          {"oracle", {{"trials", cfg.oracle_trials}, {"max_degree", cfg.max_degree}}},
          {"output_dir", cfg.output_dir}};
}

std::vector<double> effective_sweep(const ExperimentConfig& cfg) {
  switch (cfg.experiment) {
    case Experiment::Consistency: {
      std::vector<double> out;
      for (std::int64_t n : cfg.dataset_sizes) out.push_back(static_cast<double>(n));
      return out;
    }
    case Experiment::AblateSourceDim:
      return cfg.sweep.empty() ? std::vector<double>{2, 5, 8} : cfg.sweep;
    case Experiment::AblateDominance:
      return cfg.sweep.empty() ? std::vector<double>{0.5, 0.8, 1.2, 1.5} : cfg.sweep;
    case Experiment::AblateDimMismatch:
      if (!cfg.sweep.empty()) return cfg.sweep;
      if (cfg.d_z > 0) return {static_cast<double>(cfg.d_z)};
      return {3, 7};
    default:
      return {0.0};
  }
}

LatentSpec spec_for(const ExperimentConfig& cfg, Family family, double sweep_value) {
  switch (cfg.experiment) {
    case Experiment::AblateSourceDim: {
      const int d = static_cast<int>(sweep_value);
      return make_latent_spec(family, d, equally_spaced_rho(d, cfg.rho_low, cfg.rho_high), cfg.family_params);
    }
    case Experiment::AblateDominance:
      return make_latent_spec(family, cfg.d_s, rho_for_dominance_ratio(cfg.d_s, sweep_value), cfg.family_params);
    default: {
      const std::vector<double> rho =
          cfg.rho.empty() ? equally_spaced_rho(cfg.d_s, cfg.rho_low, cfg.rho_high) : cfg.rho;
      return make_latent_spec(family, cfg.d_s, rho, cfg.family_params);
    }
  }
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.max_degree < 2) config_error("oracle.max_degree must be >= 2");
  if (cfg.experiment == Experiment::OracleCheck) {
    if (cfg.oracle_trials < 1) config_error("oracle.trials must be >= 1");
    return;
  }
  if (cfg.families.empty()) config_error("at least one family is required");
  if (cfg.seeds.empty()) config_error("at least one seed is required");
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    config_error("seeds must be distinct");
  }
  if (cfg.decoder_depth < 1) config_error("decoder.depth must be >= 1");
  if (!(cfg.cond_limit >= 1.0)) config_error("decoder.cond_limit must be >= 1");
  if (cfg.d_z < 0 || cfg.d_x < 0) config_error("dimensions must be non-negative");
  for (int w : cfg.trainer.hidden_widths) {
    if (w < 1) config_error("encoder.hidden_widths must be positive");
  }
  if (cfg.trainer.steps < 1) config_error("trainer.steps must be >= 1");
  if (cfg.trainer.batch_size < 2) config_error("trainer.batch_size must be >= 2");
  if (!(cfg.trainer.adam.lr > 0.0)) config_error("trainer.lr must be positive");
  if (cfg.trainer.epsilon.kind == EpsilonPolicy::Kind::Fixed && !(cfg.trainer.epsilon.value > 0.0)) {
    config_error("trainer.epsilon must be positive");
  }
  if (cfg.trainer.eval_every < 0) config_error("trainer.eval_every must be >= 0");
  if (cfg.eval_samples < 10 || cfg.trainer.eval_samples < 10) config_error("eval sample counts must be >= 10");
  if (cfg.sampling == Sampling::FixedDataset) {
    if (cfg.dataset_sizes.empty()) config_error("fixed_dataset sampling needs sampling.n");
    for (std::int64_t n : cfg.dataset_sizes) {
      if (n < 2) config_error("sampling.n entries must be >= 2");
    }
    if (cfg.experiment != Experiment::Consistency && cfg.dataset_sizes.size() != 1) {
      config_error("only the consistency experiment sweeps several dataset sizes");
    }
  }
  if (cfg.experiment == Experiment::Consistency && cfg.sampling != Sampling::FixedDataset) {
    config_error("consistency requires fixed_dataset sampling");
  }
  const bool sweeps = cfg.experiment == Experiment::AblateSourceDim || cfg.experiment == Experiment::AblateDominance ||
                      cfg.experiment == Experiment::AblateDimMismatch;
  if (!sweeps && !cfg.sweep.empty()) config_error("'sweep' only applies to ablation experiments");
  if (cfg.experiment == Experiment::AblateSourceDim) {
    if (!cfg.rho.empty()) config_error("ablate_source_dim takes latent.rho_range, not latent.rho");
    if (cfg.d_z != 0) config_error("ablate_source_dim ties d_Z to d_S; leave encoder.d_Z unset");
  }
  if (cfg.experiment == Experiment::AblateDominance && !cfg.rho.empty()) {
    config_error("ablate_dominance derives rho from the ratio; leave latent.rho unset");
  }
  const std::vector<double> sweep = effective_sweep(cfg);
  for (double v : sweep) {
    if (!std::isfinite(v)) config_error("sweep values must be finite");
    if ((cfg.experiment == Experiment::AblateSourceDim || cfg.experiment == Experiment::AblateDimMismatch) &&
        (v != std::floor(v) || v < 1)) {
      config_error("dimension sweep values must be positive integers");
    }
    if (cfg.experiment == Experiment::AblateDimMismatch && static_cast<int>(v) == cfg.d_s) {
      throw Error(ErrorCode::WrongExperiment, "d_Z == d_S is not a dimension mismatch");
    }
  }
  // Building every spec and dimension up front surfaces unrealizable
  // correlations and shape errors before any training starts.
  try {
    for (Family f : cfg.families) {
      for (double v : sweep) {
        const LatentSpec spec = spec_for(cfg, f, v);
        if (dx_for(cfg, spec.d_s) < spec.d_s) config_error("decoder.d_X must be >= d_S");
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::WrongExperiment) throw;
    config_error(std::string(to_string(e.code())) + ": " + e.what());
  }
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ViewMaps make_view_maps(const ExperimentConfig& cfg, const LatentSpec& spec, std::uint64_t seed) {
  const int d_x = dx_for(cfg, spec.d_s);
  ViewMaps maps;
  maps.g = make_decoder(spec.d_s, d_x, cfg.decoder_depth, derive_seed(seed, kDecoderG), cfg.cond_limit);
  maps.g_prime = make_decoder(spec.d_s, d_x, cfg.decoder_depth, derive_seed(seed, kDecoderGp), cfg.cond_limit);
  return maps;
}

TrainConfig train_config_for(const ExperimentConfig& cfg, const LatentSpec& spec, std::uint64_t seed,
                             double sweep_value) {
  TrainConfig tc = cfg.trainer;
  tc.seed = seed;
  tc.d_z = dz_for(cfg, spec.d_s, sweep_value);
  tc.sampling = cfg.sampling;
  if (cfg.sampling == Sampling::FixedDataset) {
    tc.dataset_size = cfg.experiment == Experiment::Consistency ? static_cast<std::int64_t>(sweep_value)
                                                                : cfg.dataset_sizes.front();
  }
  return tc;
}

MetricsReport evaluate_pair(const ExperimentConfig& cfg, const LatentSpec& spec, const ViewMaps& maps,
                            const EncoderParams& f, const EncoderParams& fp, std::uint64_t seed, int d_z) {
  const EvalBatch batch = make_eval_batch(spec, maps, cfg.eval_samples, derive_seed(seed, kFinalEval));
  const EvalLatents lat = encode_eval(f, fp, batch, cfg.trainer.eval_epsilon);
  const std::vector<double> ref = population_canonical_correlations(spec.rho, d_z, cfg.max_degree);
  return evaluate_latents(lat, batch.sources, Eigen::Map<const Vector>(ref.data(), static_cast<Eigen::Index>(ref.size())));
}

bool ReportBundle::all_checks_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const OracleCheckResult& c) { return c.passed; });
}

std::vector<GroupAggregate> aggregate(const std::vector<ReportRow>& rows) {
  std::vector<GroupAggregate> groups;
  std::vector<std::vector<const ReportRow*>> members;
  for (const ReportRow& r : rows) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const GroupAggregate& g) {
      return g.family == r.family && g.d_s == r.d_s && g.d_z == r.d_z && same_number(g.sweep_value, r.sweep_value);
    });
    if (it == groups.end()) {
      groups.push_back({r.family, r.d_s, r.d_z, r.sweep_value, {}});
      members.emplace_back();
      it = groups.end() - 1;
    }
    members[static_cast<std::size_t>(it - groups.begin())].push_back(&r);
  }
  using Getter = double (*)(const ReportRow&);
  static const std::pair<const char*, Getter> kMetrics[] = {
      {"r2_f", [](const ReportRow& r) { return r.r2_f; }},
      {"r2_fprime", [](const ReportRow& r) { return r.r2_fprime; }},
      {"pa_mean_f", [](const ReportRow& r) { return r.pa_mean_f; }},
      {"pa_max_f", [](const ReportRow& r) { return r.pa_max_f; }},
      {"pa_mean_fprime", [](const ReportRow& r) { return r.pa_mean_fprime; }},
      {"pa_max_fprime", [](const ReportRow& r) { return r.pa_max_fprime; }},
      {"orbit_distance", [](const ReportRow& r) { return r.orbit_distance; }},
      {"sigma_gap_linf", [](const ReportRow& r) { return r.sigma_gap_linf; }},
      {"J_hat_final", [](const ReportRow& r) { return r.j_hat_final; }},
      {"wall_clock_s", [](const ReportRow& r) { return r.wall_clock_s; }},
  };
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& [name, get] : kMetrics) {
      std::vector<double> xs;
      for (const ReportRow* r : members[g]) {
        const double v = get(*r);
        if (std::isfinite(v)) xs.push_back(v);
      }
      MetricAggregate a;
      a.count = static_cast<int>(xs.size());
      if (xs.empty()) {
        a.mean = a.std = kNaN;
      } else {
        double sum = 0.0;
        for (double v : xs) sum += v;
        a.mean = sum / static_cast<double>(xs.size());
        if (xs.size() < 2) {
          a.std = kNaN;
        } else {
          double ss = 0.0;
          for (double v : xs) ss += (v - a.mean) * (v - a.mean);
          a.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        }
      }
      groups[g].metrics[name] = a;
    }
  }
  return groups;
}

double mehler_mc_max_error(double rho, int max_n, std::int64_t samples, std::uint64_t seed) {
  if (!(rho > -1.0 && rho < 1.0)) throw Error(ErrorCode::InvalidCorrelation, "rho must lie in (-1, 1)");
  if (samples < 2) throw Error(ErrorCode::InsufficientSamples, "need at least two samples");
  std::normal_distribution<double> normal;
  CounterRng rng(seed, 0);
  const int top = 2 * max_n;
  const int n_ctl = 2 * top;
  const int n_tgt = (max_n + 1) * (max_n + 1);
  const double sd = std::sqrt(1.0 - rho * rho);
  constexpr Eigen::Index kChunk = 4096;
  Matrix c(kChunk, n_ctl), y(kChunk, n_tgt);
  Matrix ctc = Matrix::Zero(n_ctl, n_ctl), cty = Matrix::Zero(n_ctl, n_tgt);
  RowVector sum_c = RowVector::Zero(n_ctl), sum_y = RowVector::Zero(n_tgt);
  Vector hs(top + 1), hp(top + 1);
  for (std::int64_t done = 0; done < samples;) {
    const Eigen::Index rows = static_cast<Eigen::Index>(std::min<std::int64_t>(kChunk, samples - done));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double s = normal(rng);
      const double sp = rho * s + sd * normal(rng);
      for (int k = 0; k <= top; ++k) {
        hs(k) = hermite_eval(k, s);
        hp(k) = hermite_eval(k, sp);
      }
      c.row(r).head(top) = hs.tail(top).transpose();
      c.row(r).tail(top) = hp.tail(top).transpose();
      for (int m = 0; m <= max_n; ++m) {
        for (int n = 0; n <= max_n; ++n) y(r, m * (max_n + 1) + n) = hs(m) * hp(n);
      }
    }
    const auto cb = c.topRows(rows);
    const auto yb = y.topRows(rows);
    ctc.noalias() += cb.transpose() * cb;
    cty.noalias() += cb.transpose() * yb;
    sum_c += cb.colwise().sum();
    sum_y += yb.colwise().sum();
    done += rows;
  }
  const double n = static_cast<double>(samples);
  const RowVector mean_c = sum_c / n, mean_y = sum_y / n;
  const Matrix scc = ctc - n * mean_c.transpose() * mean_c;
  const Matrix scy = cty - n * mean_c.transpose() * mean_y;
  const Matrix beta = scc.ldlt().solve(scy);
  // The controls have mean zero, so the adjusted estimate is mean_y - mean_c beta.
  const RowVector est = mean_y - mean_c * beta;
  double worst = 0.0;
  for (int m = 0; m <= max_n; ++m) {
    for (int k = 0; k <= max_n; ++k) {
      const double target = m == k ? std::pow(rho, k) : 0.0;
      worst = std::max(worst, std::abs(est(m * (max_n + 1) + k) - target));
    }
  }
  return worst;
}

std::vector<OracleCheckResult> run_oracle_suite(int trials, int max_degree, std::uint64_t seed) {
  std::vector<OracleCheckResult> out;
  CounterRng rng(derive_seed(seed, kOracle), 0);

  {
    // Dominance and affine optimality must agree on random spectra.
    int mismatches = 0, dominant = 0;
    std::vector<int> degrees{2};
    if (max_degree != 2) degrees.push_back(max_degree);
    for (int t = 0; t < trials; ++t) {
      const int d = 2 + static_cast<int>(rng.uniform() * 5.0);
      std::vector<double> rho(static_cast<std::size_t>(d));
      for (double& r : rho) r = 0.05 + 0.94 * rng.uniform();
      std::sort(rho.begin(), rho.end(), std::greater<>());
      const bool holds = check_dominance(rho).holds;
      dominant += holds ? 1 : 0;
      for (int deg : degrees) {
        if (verify_affine_optimality(rho, d, deg).affine_optimal != holds) ++mismatches;
      }
    }
    out.push_back({"dominance_equivalence", mismatches == 0,
                   std::to_string(trials) + " spectra, " + std::to_string(dominant) + " dominant, " +
                       std::to_string(mismatches) + " mismatches"});
  }
  {
    // The strongest higher-order entry (2, 0) displaces the second
    // first-order direction.
    const std::vector<double> rho{0.9, 0.3};
    const AffineOptimality ao = verify_affine_optimality(rho, 2, max_degree);
    const HermiteSpectrum sp = enumerate_hermite_spectrum(rho, max_degree);
    const auto top = std::find_if(sp.entries.begin(), sp.entries.end(), [](const SpectrumEntry& e) { return e.degree > 1; });
    const bool in_top = std::find(ao.top_indices.begin(), ao.top_indices.end(), std::vector<int>{2, 0}) != ao.top_indices.end();
    const bool ok = !ao.affine_optimal && in_top && std::abs(top->value - 0.81) < 1e-12 && top->alpha == std::vector<int>{2, 0};
    out.push_back({"counterexample", ok,
                   "top higher-order entry " + fmt_double(top->value) + " at (" + std::to_string(top->alpha[0]) + "," +
                       std::to_string(top->alpha[1]) + ")"});
  }
  {
    double worst = 0.0;
    for (double rho : {0.3, 0.5, 0.9}) {
      worst = std::max(worst, mehler_mc_max_error(rho, 4, 1000000, derive_seed(seed, static_cast<std::uint64_t>(rho * 1000))));
    }
    out.push_back({"mehler_monte_carlo", worst <= 0.01, "max abs error " + fmt_double(worst)});
  }
  {
    // Orthonormality of the normalized Hermite basis by Gauss quadrature on a
    // fine trapezoid grid of the Gaussian density.
    double worst = 0.0;
    const int deg = 2 * max_degree;
    const double h = 1e-3;
    for (int m = 0; m <= deg; ++m) {
      for (int n = m; n <= deg; ++n) {
        double acc = 0.0;
        for (double x = -12.0; x <= 12.0; x += h) {
          acc += hermite_eval(m, x) * hermite_eval(n, x) * std::exp(-0.5 * x * x);
        }
        acc *= h / std::sqrt(2.0 * M_PI);
        worst = std::max(worst, std::abs(acc - (m == n ? 1.0 : 0.0)));
      }
    }
    out.push_back({"hermite_orthonormality", worst < 1e-9, "max deviation " + fmt_double(worst)});
  }
  {
    // Under dominance the source-space ceiling equals the sum of the top
    // spectrum values; without it the ceiling is refused.
    const std::vector<double> rho{0.9, 0.875, 0.85};
    const auto top = population_canonical_correlations(rho, 3, max_degree);
    const double ceiling = source_space_objective(rho, 3);
    bool ok = std::abs(ceiling - (top[0] + top[1] + top[2])) < 1e-12;
    try {
      source_space_objective({0.9, 0.3}, 2);
      ok = false;
    } catch (const Error& e) {
      ok = ok && e.code() == ErrorCode::DominanceViolated;
    }
    out.push_back({"ceiling_consistency", ok, "ceiling " + fmt_double(ceiling)});
  }
  return out;
}

ReportBundle run_dim_mismatch(const ExperimentConfig& cfg) {
  if (cfg.experiment != Experiment::AblateDimMismatch) {
    throw Error(ErrorCode::WrongExperiment, "run_dim_mismatch needs an ablate_dim_mismatch config");
  }
  return run_experiment(cfg);
}

ReportBundle run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  ReportBundle bundle;
  bundle.experiment = std::string(to_string(cfg.experiment));
  bundle.config_hash = config_hash(cfg);
  bundle.config = to_json(cfg);
  bundle.eval_samples = cfg.eval_samples;

  if (cfg.experiment == Experiment::OracleCheck) {
    bundle.checks = run_oracle_suite(cfg.oracle_trials, cfg.max_degree, cfg.seeds.empty() ? 0 : cfg.seeds.front());
    bundle.extra_files.emplace_back("spectrum_counterexample.csv",
                                    spectrum_csv(enumerate_hermite_spectrum({0.9, 0.3}, cfg.max_degree)));
  } else {
    for (Family family : cfg.families) {
      for (double v : effective_sweep(cfg)) {
        for (std::uint64_t seed : cfg.seeds) {
          if (cfg.experiment == Experiment::ReparamInvariance) {
            run_reparam(cfg, family, seed, bundle.config_hash, bundle);
          } else {
            run_single(cfg, family, v, seed, bundle.config_hash, bundle);
          }
        }
      }
    }
    if (cfg.experiment == Experiment::AblateDominance) {
      for (double v : effective_sweep(cfg)) {
        bundle.extra_files.emplace_back("spectrum_ratio" + sweep_tag(v) + ".csv",
                                        spectrum_csv(enumerate_hermite_spectrum(rho_for_dominance_ratio(cfg.d_s, v),
                                                                                cfg.max_degree)));
      }
    }
    // Whitening collapse is the expected outcome for the hypergeometric
    // family; every other failed seed counts against the run.
    for (const ReportRow& r : bundle.rows) {
      if (r.failed && r.family != "hypergeometric") {
        bundle.checks.push_back({"seed_completed:" + run_label(r), false, r.error});
      }
    }
  }
  bundle.wall_clock_s = seconds_since(t0);
  return bundle;
}

std::string results_csv(const std::vector<ReportRow>& rows) {
  std::string out;
  const auto& cols = results_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  for (const ReportRow& r : rows) {
    const std::vector<std::string> cells{r.experiment,
                                         r.family,
                                         std::to_string(r.d_s),
                                         std::to_string(r.d_z),
                                         std::to_string(r.seed),
                                         fmt_double(r.sweep_value),
                                         fmt_double(r.r2_f),
                                         fmt_double(r.r2_fprime),
                                         fmt_double(r.pa_mean_f),
                                         fmt_double(r.pa_max_f),
                                         fmt_double(r.pa_mean_fprime),
                                         fmt_double(r.pa_max_fprime),
                                         fmt_double(r.orbit_distance),
                                         fmt_double(r.sigma_gap_linf),
                                         fmt_double(r.j_hat_final),
                                         std::to_string(r.steps),
                                         fmt_double(r.wall_clock_s)};
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  }
  return out;
}

std::vector<ReportRow> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "results.csv is empty");
  std::string header;
  for (std::size_t i = 0; i < results_columns().size(); ++i) header += (i ? "," : "") + results_columns()[i];
  if (line != header) throw Error(ErrorCode::IoError, "results.csv header does not match the schema");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    if (c.size() != results_columns().size()) throw Error(ErrorCode::IoError, "results.csv row has wrong arity");
    ReportRow r;
    r.experiment = c[0];
    r.family = c[1];
    r.d_s = std::stoi(c[2]);
    r.d_z = std::stoi(c[3]);
    r.seed = std::stoull(c[4]);
    r.sweep_value = parse_double(c[5]);
    r.r2_f = parse_double(c[6]);
    r.r2_fprime = parse_double(c[7]);
    r.pa_mean_f = parse_double(c[8]);
    r.pa_max_f = parse_double(c[9]);
    r.pa_mean_fprime = parse_double(c[10]);
    r.pa_max_fprime = parse_double(c[11]);
    r.orbit_distance = parse_double(c[12]);
    r.sigma_gap_linf = parse_double(c[13]);
    r.j_hat_final = parse_double(c[14]);
    r.steps = std::stoi(c[15]);
    r.wall_clock_s = parse_double(c[16]);
    r.failed = std::isnan(r.r2_f);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string history_csv(const RunRecord& run) {
  std::string out = "step,J_hat";
  for (int k = 1; k <= run.d_z; ++k) out += ",sigma_" + std::to_string(k);
  out += ",eval_R2_f,eval_R2_fprime,orbit_distance\n";
  for (const HistoryRow& h : run.history.rows) {
    out += std::to_string(h.step) + "," + fmt_double(h.j_hat);
    for (int k = 0; k < run.d_z; ++k) out += "," + fmt_double(k < h.sigmas.size() ? h.sigmas(k) : kNaN);
    out += "," + fmt_double(h.r2_f) + "," + fmt_double(h.r2_fprime) + "," + fmt_double(h.orbit_distance) + "\n";
  }
  return out;
}

void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "results.csv", results_csv(bundle.rows));

  json failures = json::array();
  for (const ReportRow& r : bundle.rows) {
    if (r.failed) failures.push_back({{"run", run_label(r)}, {"error", r.error}});
  }
  json checks = json::array();
  for (const OracleCheckResult& c : bundle.checks) {
    checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  }
  json profiles = json::object();
  for (const ReportRow& r : bundle.rows) {
    if (!r.pa_profile_f.empty()) profiles[run_label(r)] = r.pa_profile_f;
  }
  const json summary = {{"experiment", bundle.experiment},
                        {"config_hash", bundle.config_hash},
                        {"config", bundle.config},
                        {"rows", bundle.rows.size()},
                        {"eval_samples", bundle.eval_samples},
                        {"wall_clock_s", bundle.wall_clock_s},
                        {"aggregates", aggregates_to_json(aggregate(bundle.rows))},
                        {"failures", failures},
                        {"checks", checks},
                        {"all_checks_pass", bundle.all_checks_pass()},
                        {"principal_angle_profiles_f", profiles}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");

  for (const auto& [name, text] : bundle.extra_files) write_file(dir / name, text);
  for (const RunRecord& run : bundle.runs) {
    if (!run.history.rows.empty()) write_file(dir / ("history_" + run.label + ".csv"), history_csv(run));
    if (!run.reparam_trace.empty()) {
      std::string t = "step,sigma_gap_linf,orbit_f,orbit_fprime\n";
      for (const ReparamTracePoint& p : run.reparam_trace) {
        t += std::to_string(p.step) + "," + fmt_double(p.sigma_gap) + "," + fmt_double(p.orbit_f) + "," +
             fmt_double(p.orbit_fprime) + "\n";
      }
      write_file(dir / ("reparam_" + run.label + ".csv"), t);
    }
    if (!run.checkpoint.is_null()) write_file(dir / ("checkpoint_" + run.label + ".json"), run.checkpoint.dump());
  }
}

LoadedReport load_report(const std::filesystem::path& dir) {
  LoadedReport rep;
  rep.rows = parse_results_csv(read_file(dir / "results.csv"));
  try {
    rep.summary = json::parse(read_file(dir / "summary.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, (dir / "summary.json").string() + ": " + e.what());
  }
  rep.aggregates = aggregate(rep.rows);
  const json& stored = rep.summary.at("aggregates");
  bool ok = stored.size() == rep.aggregates.size() && rep.summary.at("rows").get<std::size_t>() == rep.rows.size();
  for (std::size_t g = 0; ok && g < rep.aggregates.size(); ++g) {
    const GroupAggregate& a = rep.aggregates[g];
    const json& s = stored[g];
    ok = s.at("family") == a.family && s.at("d_S") == a.d_s && s.at("d_Z") == a.d_z &&
         same_number(number_from_json(s.at("sweep_value")), a.sweep_value);
    for (const auto& [name, m] : a.metrics) {
      if (!ok) break;
      const json& sm = s.at("metrics").at(name);
      ok = sm.at("count") == m.count && same_number(number_from_json(sm.at("mean")), m.mean) &&
           same_number(number_from_json(sm.at("std")), m.std);
    }
  }
  if (!ok) throw Error(ErrorCode::IoError, "aggregates in " + dir.string() + " do not match results.csv");
  return rep;
}

}  // namespace ncca
