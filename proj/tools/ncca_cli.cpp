// Command-line front end: generate data, train, evaluate checkpoints, run
// ablations and the population-oracle checks from one JSON config.
//
// Exit codes: 0 all pass, 1 acceptance violation, 2 config error,
// 3 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ncca/error.hpp"
#include "ncca/harness.hpp"
#include "ncca/json_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ncca;

namespace {

constexpr int kPass = 0, kViolation = 1, kConfigError = 2, kRuntimeError = 3;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", args.seed, "run this single seed instead of the config's list");
  cmd->add_option("--out", args.out, "output directory (overrides output_dir)");
}

ExperimentConfig load_config(const CommonArgs& args) {
  json j = json::object();
  if (!args.config.empty()) {
    std::ifstream in(args.config);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + args.config);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, args.config + ": " + e.what());
    }
  }
  if (args.seed) j["seeds"] = json::array({*args.seed});
  if (args.out) j["output_dir"] = *args.out;
  return experiment_config_from_json(j);
}

void require(const ExperimentConfig& cfg, std::initializer_list<Experiment> allowed, const char* verb) {
  for (Experiment e : allowed) {
    if (cfg.experiment == e) return;
  }
  throw Error(ErrorCode::ConfigError,
              std::string("'") + verb + "' cannot run experiment '" + std::string(to_string(cfg.experiment)) + "'");
}

void print_rows(const std::vector<ReportRow>& rows) {
  for (const ReportRow& r : rows) {
    std::printf("%-15s d_S=%-2d d_Z=%-2d sweep=%-8g seed=%-3llu R2=%.4f/%.4f PAmax=%.2f/%.2f orbit=%.4f gap=%.4f%s\n",
                r.family.c_str(), r.d_s, r.d_z, r.sweep_value, static_cast<unsigned long long>(r.seed), r.r2_f,
                r.r2_fprime, r.pa_max_f, r.pa_max_fprime, r.orbit_distance, r.sigma_gap_linf,
                r.failed ? ("  FAILED " + r.error).c_str() : "");
  }
}

int finish(const ReportBundle& bundle, const ExperimentConfig& cfg) {
  emit_report(bundle, cfg.output_dir);
  print_rows(bundle.rows);
  for (const OracleCheckResult& c : bundle.checks) {
    std::printf("%s %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
  }
  std::printf("wrote %s (config %s, %.1f s)\n", cfg.output_dir.c_str(), bundle.config_hash.c_str(),
              bundle.wall_clock_s);
  return bundle.all_checks_pass() ? kPass : kViolation;
}

std::string matrix_csv_block(const std::vector<std::pair<std::string, const Matrix*>>& blocks) {
  std::ostringstream out;
  out.precision(17);
  bool first = true;
  for (const auto& [name, m] : blocks) {
    for (Eigen::Index c = 0; c < m->cols(); ++c) {
      out << (first ? "" : ",") << name << "_" << (c + 1);
      first = false;
    }
  }
  out << '\n';
  const Eigen::Index n = blocks.front().second->rows();
  for (Eigen::Index r = 0; r < n; ++r) {
    first = true;
    for (const auto& [name, m] : blocks) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) {
        out << (first ? "" : ",") << (*m)(r, c);
        first = false;
      }
    }
    out << '\n';
  }
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

int cmd_generate(const CommonArgs& args, std::int64_t n) {
  const ExperimentConfig cfg = load_config(args);
  require(cfg,
          {Experiment::Identifiability, Experiment::ReparamInvariance, Experiment::Consistency,
           Experiment::AblateSourceDim, Experiment::AblateDominance, Experiment::AblateDimMismatch},
          "generate");
  fs::create_directories(cfg.output_dir);
  for (Family family : cfg.families) {
    for (double v : effective_sweep(cfg)) {
      for (std::uint64_t seed : cfg.seeds) {
        const LatentSpec spec = spec_for(cfg, family, v);
        const ViewMaps maps = make_view_maps(cfg, spec, seed);
        const EvalBatch b = make_eval_batch(spec, maps, n, seed);
        ReportRow tag;
        tag.family = std::string(to_string(family));
        tag.sweep_value = v;
        tag.seed = seed;
        const std::string stem = run_label(tag);
        const json meta = {{"latent_spec", to_json(spec)},
                           {"decoder_g", to_json(*maps.g)},
                           {"decoder_gprime", to_json(*maps.g_prime)},
                           {"n", n},
                           {"seed", seed},
                           {"config_hash", config_hash(cfg)}};
        write_text(fs::path(cfg.output_dir) / ("generated_" + stem + ".json"), meta.dump(2) + "\n");
        write_text(fs::path(cfg.output_dir) / ("generated_" + stem + ".csv"),
                   matrix_csv_block({{"s", &b.sources.s}, {"sprime", &b.sources.s_prime}, {"x", &b.x},
                                     {"xprime", &b.x_prime}}));
        std::printf("generated %s (%lld rows)\n", stem.c_str(), static_cast<long long>(n));
      }
    }
  }
  return kPass;
}

int cmd_train(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  require(cfg, {Experiment::Identifiability, Experiment::ReparamInvariance, Experiment::Consistency}, "train");
  return finish(run_experiment(cfg), cfg);
}

int cmd_ablate(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  require(cfg, {Experiment::AblateSourceDim, Experiment::AblateDominance, Experiment::AblateDimMismatch}, "ablate");
  const ReportBundle bundle = cfg.experiment == Experiment::AblateDimMismatch ? run_dim_mismatch(cfg)
                                                                             : run_experiment(cfg);
  return finish(bundle, cfg);
}

int cmd_oracle(const CommonArgs& args) {
  CommonArgs a = args;
  ExperimentConfig cfg;
  if (a.config.empty()) {
    json j = {{"experiment", "oracle_check"}};
    if (a.seed) j["seeds"] = json::array({*a.seed});
    j["output_dir"] = a.out.value_or("oracle_check");
    cfg = experiment_config_from_json(j);
  } else {
    cfg = load_config(a);
  }
  require(cfg, {Experiment::OracleCheck}, "oracle-check");
  return finish(run_experiment(cfg), cfg);
}

// Re-evaluates every stored checkpoint on the deterministic evaluation batch
// and compares against results.csv.
int cmd_evaluate(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  require(cfg, {Experiment::Identifiability, Experiment::Consistency, Experiment::AblateSourceDim,
                Experiment::AblateDominance, Experiment::AblateDimMismatch},
          "evaluate");
  const fs::path dir = cfg.output_dir;
  const LoadedReport rep = load_report(dir);
  if (rep.summary.at("config_hash") != config_hash(cfg)) {
    throw Error(ErrorCode::ConfigError, "config does not match the report in " + dir.string());
  }
  json out = json::array();
  bool ok = true;
  for (const ReportRow& row : rep.rows) {
    if (row.failed) continue;
    const fs::path ck = dir / ("checkpoint_" + run_label(row) + ".json");
    std::ifstream in(ck);
    if (!in) throw Error(ErrorCode::IoError, "missing checkpoint " + ck.string());
    const json j = json::parse(in);
    const Family family = family_from_string(row.family);
    const LatentSpec spec = spec_for(cfg, family, row.sweep_value);
    const ViewMaps maps = make_view_maps(cfg, spec, row.seed);
    const MetricsReport m = evaluate_pair(cfg, spec, maps, encoder_from_json(j.at("encoder_f")),
                                          encoder_from_json(j.at("encoder_fprime")), row.seed, row.d_z);
    const double diff = std::max(std::abs(m.f.r2.mean - row.r2_f), std::abs(m.fprime.r2.mean - row.r2_fprime));
    const bool match = diff <= 1e-9;
    ok = ok && match;
    out.push_back({{"run", run_label(row)},
                   {"r2_f", m.f.r2.mean},
                   {"r2_fprime", m.fprime.r2.mean},
                   {"pa_max_f", m.f.pa.max},
                   {"pa_max_fprime", m.fprime.pa.max},
                   {"matches_results", match}});
    std::printf("%s R2=%.4f/%.4f %s\n", run_label(row).c_str(), m.f.r2.mean, m.fprime.r2.mean,
                match ? "matches" : "DIFFERS");
  }
  write_text(dir / "evaluation.json", json{{"config_hash", config_hash(cfg)}, {"runs", out}}.dump(2) + "\n");
  return ok ? kPass : kViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear CCA identifiability experiments"};
  app.require_subcommand(1);
  CommonArgs gen, train, eval, ablate, oracle;
  std::int64_t gen_n = 10000;

  auto* g = app.add_subcommand("generate", "sample sources and observations for every run of a config");
  add_common(g, gen);
  g->add_option("--n", gen_n, "samples per run")->check(CLI::PositiveNumber);
  add_common(app.add_subcommand("train", "identifiability, reparam_invariance or consistency"), train);
  add_common(app.add_subcommand("evaluate", "re-evaluate stored checkpoints against results.csv"), eval);
  add_common(app.add_subcommand("ablate", "source-dimension, dominance or dimension-mismatch sweeps"), ablate);
  add_common(app.add_subcommand("oracle-check", "population-oracle invariant suite"), oracle, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kConfigError;
  }

  try {
    if (app.got_subcommand("generate")) return cmd_generate(gen, gen_n);
    if (app.got_subcommand("train")) return cmd_train(train);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(eval);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate);
    if (app.got_subcommand("oracle-check")) return cmd_oracle(oracle);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    const bool config = e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::WrongExperiment;
    return config ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kRuntimeError;
}
