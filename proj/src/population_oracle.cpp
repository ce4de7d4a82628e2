#include "ncca/population_oracle.hpp"

#include <charconv>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "ncca/error.hpp"
#include "ncca/latent_model.hpp"

namespace ncca {

double hermite_eval(int n, double x) {
  if (n < 0) throw Error(ErrorCode::InvalidDimension, "Hermite degree must be >= 0");
  // Normalized recurrence: h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1).
  double prev = 0.0;
  double cur = 1.0;
  for (int k = 0; k < n; ++k) {
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) / std::sqrt(k + 1.0);
    prev = cur;
    cur = next;
  }
  return cur;
}

double mehler_cross_moment(int m, int n, double rho) {
  if (m < 0 || n < 0) throw Error(ErrorCode::InvalidDimension, "Hermite degree must be >= 0");
  if (!(rho > -1.0 && rho < 1.0)) throw Error(ErrorCode::InvalidCorrelation, "rho must lie in (-1, 1)");
  return m == n ? std::pow(rho, n) : 0.0;
}

HermiteSpectrum enumerate_hermite_spectrum(const std::vector<double>& rho, int max_degree) {
  if (rho.empty()) throw Error(ErrorCode::InvalidDimension, "empty rho");
  if (max_degree < 1) throw Error(ErrorCode::InvalidDimension, "max_degree must be >= 1");
  for (double r : rho) {
    if (!(r > 0.0 && r < 1.0)) throw Error(ErrorCode::InvalidCorrelation, "rho must lie in (0, 1)");
  }
  HermiteSpectrum spec;
  spec.d = static_cast<int>(rho.size());
  spec.max_degree = max_degree;

  std::vector<int> alpha(rho.size(), 0);
  std::function<void(std::size_t, int)> visit = [&](std::size_t pos, int remaining) {
    if (pos == rho.size()) {
      const int degree = max_degree - remaining;
      if (degree == 0) return;
      double value = 1.0;
      for (std::size_t i = 0; i < rho.size(); ++i)
        for (int p = 0; p < alpha[i]; ++p) value *= rho[i];
      spec.entries.push_back({alpha, degree, value});
      return;
    }
    for (int k = 0; k <= remaining; ++k) {
      alpha[pos] = k;
      visit(pos + 1, remaining - k);
    }
    alpha[pos] = 0;
  };
  visit(0, max_degree);

  std::stable_sort(spec.entries.begin(), spec.entries.end(), [](const SpectrumEntry& a, const SpectrumEntry& b) {
    if (a.value != b.value) return a.value > b.value;
    if (a.degree != b.degree) return a.degree > b.degree;
    return a.alpha > b.alpha;
  });
  return spec;
}

std::string spectrum_csv(const HermiteSpectrum& spectrum) {
  std::string out = "alpha,degree,value\n";
  char buf[40];
  for (const SpectrumEntry& e : spectrum.entries) {
    for (std::size_t i = 0; i < e.alpha.size(); ++i) out += (i ? " " : "") + std::to_string(e.alpha[i]);
    const auto res = std::to_chars(buf, buf + sizeof buf, e.value);
    out += "," + std::to_string(e.degree) + "," + std::string(buf, res.ptr) + "\n";
  }
  return out;
}

AffineOptimality verify_affine_optimality(const std::vector<double>& rho, int d_z, int max_degree) {
  if (d_z != static_cast<int>(rho.size())) {
    throw Error(ErrorCode::InvalidDimension, "affine optimality is certified for d_Z = d_S only");
  }
  if (max_degree < 2) throw Error(ErrorCode::InvalidDimension, "max_degree must be >= 2");
  const HermiteSpectrum spec = enumerate_hermite_spectrum(rho, max_degree);
  AffineOptimality out;
  out.affine_optimal = true;
  for (int k = 0; k < d_z; ++k) {
    out.top_indices.push_back(spec.entries[k].alpha);
    if (spec.entries[k].degree != 1) out.affine_optimal = false;
  }
  return out;
}

double source_space_objective(const std::vector<double>& rho, int d_z) {
  if (d_z < 1 || d_z > static_cast<int>(rho.size())) {
    throw Error(ErrorCode::InvalidDimension, "d_Z must lie in [1, d_S]");
  }
  if (!check_dominance(rho).holds) {
    throw Error(ErrorCode::DominanceViolated, "first-order dominance fails; the affine ceiling is not optimal");
  }
  double sum = 0.0;
  for (int i = 0; i < d_z; ++i) sum += rho[i];
  return sum;
}

std::vector<double> population_canonical_correlations(const std::vector<double>& rho, int k, int max_degree) {
  const HermiteSpectrum spec = enumerate_hermite_spectrum(rho, max_degree);
  if (k > static_cast<int>(spec.entries.size())) {
    throw Error(ErrorCode::InvalidDimension, "more correlations requested than spectrum entries");
  }
  std::vector<double> out;
  for (int i = 0; i < k; ++i) out.push_back(spec.entries[i].value);
  return out;
}

}  // namespace ncca
