#include "ncca/latent_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ncca/error.hpp"
#include "ncca/rng.hpp"

namespace ncca {

namespace {

constexpr double kGridTolerance = 1e-3;
constexpr int kMaxBinomialTrials = 400;

double hyper_variance(int population, int successes, int draws) {
  const double p = static_cast<double>(successes) / population;
  return draws * p * (1.0 - p) * (population - draws) / (population - 1.0);
}

double component_variance(const LatentSpec& spec, double param) {
  const FamilyParams& fp = spec.params;
  switch (spec.family) {
    case Family::Gaussian:
    case Family::Gamma:
    case Family::Poisson:
      return param;
    case Family::Binomial:
      return param * fp.binomial_p * (1.0 - fp.binomial_p);
    case Family::Hypergeometric:
      return hyper_variance(fp.hyper_population, fp.hyper_successes, static_cast<int>(param));
  }
  return 0.0;
}

double component_mean(const LatentSpec& spec, double param) {
  const FamilyParams& fp = spec.params;
  switch (spec.family) {
    case Family::Gaussian:
      return 0.0;
    case Family::Gamma:
    case Family::Poisson:
      return param;
    case Family::Binomial:
      return param * fp.binomial_p;
    case Family::Hypergeometric:
      return param * static_cast<double>(fp.hyper_successes) / fp.hyper_population;
  }
  return 0.0;
}

// Smallest total >= the default that puts n_c / total within tolerance of rho.
std::pair<int, int> binomial_grid(double rho, int default_total) {
  for (int total = std::max(default_total, 2); total <= kMaxBinomialTrials; ++total) {
    const int n_c = static_cast<int>(std::lround(rho * total));
    if (n_c < 1 || n_c >= total) continue;
    if (std::abs(static_cast<double>(n_c) / total - rho) <= kGridTolerance) return {total - n_c, n_c};
  }
  std::ostringstream msg;
  msg << "binomial trial grid cannot realize rho=" << rho;
  throw Error(ErrorCode::UnrealizableCorrelation, msg.str());
}

// Draw counts whose variance ratio is closest to rho; draws above N/2 are
// redundant because the variance is symmetric about N/2.
std::pair<int, int> hypergeometric_grid(double rho, int population, int successes) {
  double best_err = 1.0;
  std::pair<int, int> best{0, 0};
  for (int m_c = 1; m_c <= population / 2; ++m_c) {
    const double vc = hyper_variance(population, successes, m_c);
    for (int m_a = 1; m_a <= population / 2; ++m_a) {
      const double va = hyper_variance(population, successes, m_a);
      const double err = std::abs(vc / (va + vc) - rho);
      if (err < best_err) {
        best_err = err;
        best = {m_a, m_c};
      }
    }
  }
  if (best_err > kGridTolerance) {
    std::ostringstream msg;
    msg << "hypergeometric draw grid cannot realize rho=" << rho;
    throw Error(ErrorCode::UnrealizableCorrelation, msg.str());
  }
  return best;
}

// Inverse-CDF sampler over the hypergeometric support {0, ..., draws}.
class HypergeometricTable {
 public:
  HypergeometricTable(int population, int successes, int draws) {
    const int lo = std::max(0, draws - (population - successes));
    const int hi = std::min(draws, successes);
    auto log_choose = [](int n, int k) {
      return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    };
    const double log_total = log_choose(population, draws);
    double acc = 0.0;
    offset_ = lo;
    for (int k = lo; k <= hi; ++k) {
      acc += std::exp(log_choose(successes, k) + log_choose(population - successes, draws - k) - log_total);
      cdf_.push_back(acc);
    }
    cdf_.back() = 1.0;
  }

  int operator()(CounterRng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return offset_ + static_cast<int>(std::min<std::ptrdiff_t>(it - cdf_.begin(), cdf_.size() - 1));
  }

 private:
  std::vector<double> cdf_;
  int offset_ = 0;
};

// Fills one column with n draws of a single component.
void draw_component(const LatentSpec& spec, double param, CounterRng& rng, Eigen::Ref<Vector> out) {
  const Eigen::Index n = out.size();
  switch (spec.family) {
    case Family::Gaussian: {
      std::normal_distribution<double> dist(0.0, std::sqrt(param));
      for (Eigen::Index r = 0; r < n; ++r) out(r) = dist(rng);
      break;
    }
    case Family::Gamma: {
      std::gamma_distribution<double> dist(param, 1.0);
      for (Eigen::Index r = 0; r < n; ++r) out(r) = dist(rng);
      break;
    }
    case Family::Poisson: {
      std::poisson_distribution<int> dist(param);
      for (Eigen::Index r = 0; r < n; ++r) out(r) = dist(rng);
      break;
    }
    case Family::Binomial: {
      std::binomial_distribution<int> dist(static_cast<int>(param), spec.params.binomial_p);
      for (Eigen::Index r = 0; r < n; ++r) out(r) = dist(rng);
      break;
    }
    case Family::Hypergeometric: {
      const HypergeometricTable table(spec.params.hyper_population, spec.params.hyper_successes,
                                      static_cast<int>(param));
      for (Eigen::Index r = 0; r < n; ++r) out(r) = table(rng);
      break;
    }
  }
}

void validate_rho(int d_s, const std::vector<double>& rho) {
  if (d_s < 2) throw Error(ErrorCode::InvalidDimension, "source dimension must be >= 2");
  if (static_cast<int>(rho.size()) != d_s) {
    throw Error(ErrorCode::InvalidDimension, "rho length must equal the source dimension");
  }
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (!(rho[i] > 0.0 && rho[i] < 1.0)) {
      throw Error(ErrorCode::InvalidCorrelation, "every rho must lie in (0, 1)");
    }
    if (i > 0 && rho[i] > rho[i - 1]) {
      throw Error(ErrorCode::InvalidCorrelation, "rho must be sorted in descending order");
    }
  }
}

}  // namespace

std::string_view to_string(Family family) {
  switch (family) {
    case Family::Gaussian: return "gaussian";
    case Family::Binomial: return "binomial";
    case Family::Gamma: return "gamma";
    case Family::Poisson: return "poisson";
    case Family::Hypergeometric: return "hypergeometric";
  }
  return "unknown";
}

Family family_from_string(std::string_view name) {
  for (Family f : {Family::Gaussian, Family::Binomial, Family::Gamma, Family::Poisson,
                   Family::Hypergeometric}) {
    if (to_string(f) == name) return f;
  }
  throw Error(ErrorCode::ConfigError, "unknown family '" + std::string(name) + "'");
}

LatentSpec make_latent_spec(Family family, int d_s, const std::vector<double>& rho,
                            const FamilyParams& base) {
  validate_rho(d_s, rho);
  LatentSpec spec;
  spec.family = family;
  spec.d_s = d_s;
  spec.rho = rho;
  spec.params = base;
  spec.params.view_specific.assign(d_s, 0.0);
  spec.params.shared.assign(d_s, 0.0);

  FamilyParams& fp = spec.params;
  for (int i = 0; i < d_s; ++i) {
    const double r = rho[i];
    switch (family) {
      case Family::Gaussian:
        fp.view_specific[i] = 1.0 - r;
        fp.shared[i] = r;
        break;
      case Family::Gamma:
        fp.view_specific[i] = fp.gamma_total_shape * (1.0 - r);
        fp.shared[i] = fp.gamma_total_shape * r;
        break;
      case Family::Poisson:
        fp.view_specific[i] = fp.poisson_total_rate * (1.0 - r);
        fp.shared[i] = fp.poisson_total_rate * r;
        break;
      case Family::Binomial: {
        const auto [n_a, n_c] = binomial_grid(r, fp.binomial_total_trials);
        fp.view_specific[i] = n_a;
        fp.shared[i] = n_c;
        break;
      }
      case Family::Hypergeometric: {
        const auto [m_a, m_c] = hypergeometric_grid(r, fp.hyper_population, fp.hyper_successes);
        fp.view_specific[i] = m_a;
        fp.shared[i] = m_c;
        break;
      }
    }
  }

  spec.standardizers.resize(d_s);
  for (int i = 0; i < d_s; ++i) {
    const double mean = component_mean(spec, fp.view_specific[i]) + component_mean(spec, fp.shared[i]);
    const double var = component_variance(spec, fp.view_specific[i]) + component_variance(spec, fp.shared[i]);
    spec.standardizers[i] = {mean, std::sqrt(var)};
  }
  return spec;
}

double realized_correlation(const LatentSpec& spec, int i) {
  const double va = component_variance(spec, spec.params.view_specific[i]);
  const double vc = component_variance(spec, spec.params.shared[i]);
  return vc / (va + vc);
}

DominanceCheck check_dominance(const std::vector<double>& rho) {
  if (rho.empty()) throw Error(ErrorCode::InvalidDimension, "empty rho");
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (!(rho[i] > 0.0 && rho[i] < 1.0) || (i > 0 && rho[i] > rho[i - 1])) {
      throw Error(ErrorCode::InvalidCorrelation, "rho must be descending within (0, 1)");
    }
  }
  const double top_sq = rho.front() * rho.front();
  return {rho.back() > top_sq, rho.back() / top_sq};
}

SourceBatch sample_source_pair(const LatentSpec& spec, Eigen::Index n, std::uint64_t seed) {
  if (n < 2) throw Error(ErrorCode::InsufficientSamples, "need at least two samples");
  SourceBatch batch;
  batch.seed = seed;
  batch.spec_id = spec_id(spec);
  batch.s.resize(n, spec.d_s);
  batch.s_prime.resize(n, spec.d_s);
  Vector shared(n);
  for (int i = 0; i < spec.d_s; ++i) {
    const auto stream = static_cast<std::uint64_t>(3 * i);
    CounterRng rng_a(seed, stream), rng_b(seed, stream + 1), rng_c(seed, stream + 2);
    draw_component(spec, spec.params.view_specific[i], rng_a, batch.s.col(i));
    draw_component(spec, spec.params.view_specific[i], rng_b, batch.s_prime.col(i));
    draw_component(spec, spec.params.shared[i], rng_c, shared);
    const Standardizer& z = spec.standardizers[i];
    batch.s.col(i) = ((batch.s.col(i) + shared).array() - z.mean) / z.sd;
    batch.s_prime.col(i) = ((batch.s_prime.col(i) + shared).array() - z.mean) / z.sd;
  }
  return batch;
}

Matrix population_cross_cov(const LatentSpec& spec) {
  Matrix m = Matrix::Zero(spec.d_s, spec.d_s);
  for (int i = 0; i < spec.d_s; ++i) m(i, i) = spec.rho[i];
  return m;
}

std::vector<double> equally_spaced_rho(int d, double lo, double hi) {
  std::vector<double> rho(d);
  for (int i = 0; i < d; ++i) {
    rho[i] = d == 1 ? hi : hi - (hi - lo) * static_cast<double>(i) / (d - 1);
  }
  return rho;
}

std::string spec_id(const LatentSpec& spec) {
  std::ostringstream os;
  os << to_string(spec.family) << "/d" << spec.d_s;
  for (double r : spec.rho) os << "/" << r;
  return os.str();
}

nlohmann::json to_json(const LatentSpec& spec) {
  const FamilyParams& fp = spec.params;
  return {
      {"family", to_string(spec.family)},
      {"d_S", spec.d_s},
      {"rho", spec.rho},
      {"family_params",
       {{"view_specific", fp.view_specific},
        {"shared", fp.shared},
        {"gamma_total_shape", fp.gamma_total_shape},
        {"poisson_total_rate", fp.poisson_total_rate},
        {"binomial_total_trials", fp.binomial_total_trials},
        {"binomial_p", fp.binomial_p},
        {"hyper_population", fp.hyper_population},
        {"hyper_successes", fp.hyper_successes}}},
  };
}

LatentSpec latent_spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kKeys{"family", "d_S", "rho", "family_params"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw Error(ErrorCode::ConfigError, "unknown latent spec key '" + key + "'");
    }
  }
  FamilyParams base;
  if (j.contains("family_params")) {
    const auto& fp = j.at("family_params");
    base.gamma_total_shape = fp.value("gamma_total_shape", base.gamma_total_shape);
    base.poisson_total_rate = fp.value("poisson_total_rate", base.poisson_total_rate);
    base.binomial_total_trials = fp.value("binomial_total_trials", base.binomial_total_trials);
    base.binomial_p = fp.value("binomial_p", base.binomial_p);
    base.hyper_population = fp.value("hyper_population", base.hyper_population);
    base.hyper_successes = fp.value("hyper_successes", base.hyper_successes);
  }
  const auto rho = j.at("rho").get<std::vector<double>>();
  const int d_s = j.value("d_S", static_cast<int>(rho.size()));
  return make_latent_spec(family_from_string(j.at("family").get<std::string>()), d_s, rho, base);
}

}  // namespace ncca
