#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncca/linalg.hpp"

namespace ncca {

enum class Family { Gaussian, Binomial, Gamma, Poisson, Hypergeometric };

std::string_view to_string(Family family);
Family family_from_string(std::string_view name);

/// Per-coordinate parameters of the additive model s = a + c, s' = b + c.
/// `view_specific` parameterizes a and b, `shared` parameterizes c:
///   Gaussian        variances
///   Gamma           shapes (scale fixed at 1)
///   Poisson         rates
///   Binomial        trial counts (common success probability)
///   Hypergeometric  draw counts (common population and success count)
struct FamilyParams {
  std::vector<double> view_specific;
  std::vector<double> shared;
  double gamma_total_shape = 4.0;
  double poisson_total_rate = 8.0;
  int binomial_total_trials = 40;
  double binomial_p = 0.5;
  int hyper_population = 100;
  int hyper_successes = 50;
};

struct Standardizer {
  double mean = 0.0;
  double sd = 1.0;
};

struct LatentSpec {
  Family family = Family::Gaussian;
  int d_s = 0;
  std::vector<double> rho;
  FamilyParams params;
  std::vector<Standardizer> standardizers;  // identical for s and s'
};

struct SourceBatch {
  Matrix s;
  Matrix s_prime;
  std::uint64_t seed = 0;
  std::string spec_id;
};

struct DominanceCheck {
  bool holds = false;
  double ratio = 0.0;
};

/// Builds a spec whose standardized sources have canonical correlations rho.
/// Family constants (total shape, total trials, ...) are taken from `base`.
LatentSpec make_latent_spec(Family family, int d_s, const std::vector<double>& rho,
                            const FamilyParams& base = {});

/// First-order canonical dominance: rho_min > rho_max^2.
DominanceCheck check_dominance(const std::vector<double>& rho);

/// Draws n standardized source pairs. Deterministic in (spec, n, seed).
SourceBatch sample_source_pair(const LatentSpec& spec, Eigen::Index n, std::uint64_t seed);

/// diag(rho): the population cross-covariance of the standardized sources.
Matrix population_cross_cov(const LatentSpec& spec);

/// Var(c) / (Var(a) + Var(c)) for coordinate i, from the family parameters.
double realized_correlation(const LatentSpec& spec, int i);

/// Descending, equally spaced correlations on [lo, hi].
std::vector<double> equally_spaced_rho(int d, double lo, double hi);

/// Short stable identifier (family, d, rho) used to tag batches.
std::string spec_id(const LatentSpec& spec);

nlohmann::json to_json(const LatentSpec& spec);
LatentSpec latent_spec_from_json(const nlohmann::json& j);

}  // namespace ncca
