#include "drustat/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <boost/math/distributions/normal.hpp>

namespace drustat {
namespace {

struct CorrectionInputs {
  std::vector<double> left;
  std::vector<double> right;
  PairMode mode;
  std::span<const double> axis1;
  std::span<const double> axis2;
};

CorrectionInputs correction_inputs(Method method, const Dataset& data, const NuisanceValues& nuis) {
  const std::size_t n = data.size();
  const auto a = data.a();
  const auto y = data.y();
  CorrectionInputs in;
  in.left.resize(n);
  in.right.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.left[i] = a[i] * nuis.omega_hat[i] - 1.0;
    in.right[i] = a[i] * (y[i] - nuis.mu_hat[i]);
  }
  switch (method) {
    case Method::omega:
      in.mode = PairMode::omega_1d;
      in.axis1 = nuis.omega_hat;
      break;
    case Method::mu:
      in.mode = PairMode::mu_loo_1d;
      in.axis1 = nuis.mu_hat;
      break;
    case Method::main:
      in.mode = PairMode::product_2d;
      in.axis1 = nuis.omega_hat;
      in.axis2 = nuis.mu_hat;
      break;
    case Method::aipw:
      throw Error(Errc::invalid_input, "aipw has no correction term");
  }
  return in;
}

double pair_count(std::size_t n) { return static_cast<double>(n) * static_cast<double>(n - 1); }

double quantile_type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::aipw: return "aipw";
    case Method::omega: return "omega";
    case Method::mu: return "mu";
    case Method::main: return "main";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "aipw") return Method::aipw;
  if (name == "omega") return Method::omega;
  if (name == "mu") return Method::mu;
  if (name == "main") return Method::main;
  throw Error(Errc::invalid_input, "unknown method '" + std::string(name) + "'");
}

std::vector<double> aipw_contributions(const Dataset& data, const NuisanceValues& nuis) {
  const std::size_t n = data.size();
  const auto a = data.a();
  const auto y = data.y();
  std::vector<double> phi(n);
  for (std::size_t i = 0; i < n; ++i) {
    phi[i] = a[i] * nuis.omega_hat[i] * (y[i] - nuis.mu_hat[i]) + nuis.mu_hat[i];
  }
  return phi;
}

double aipw(const Dataset& data, const NuisanceValues& nuis) {
  const auto phi = aipw_contributions(data, nuis);
  return std::accumulate(phi.begin(), phi.end(), 0.0) / static_cast<double>(phi.size());
}

PairwiseDecomposition correction_terms(Method method, const Dataset& data, const NuisanceValues& nuis,
                                       const KernelSpec& spec, const CorrectionOptions& options, bool with_columns) {
  const auto in = correction_inputs(method, data, nuis);
  PairwiseTerms terms;
  terms.left = in.left;
  terms.right = in.right;
  terms.axis1 = in.axis1;
  terms.axis2 = in.axis2;
  terms.density_weights = data.a();
  terms.q_floor = options.q_floor;
  auto out = pairwise_decompose(terms, spec, in.mode, options.path, with_columns);
  if (out.all_q_zero) {
    throw Error(Errc::all_qhat_zero, "every kernel normalizer is zero at h = " + std::to_string(spec.h));
  }
  return out;
}

double correction_omega(const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec,
                        const CorrectionOptions& options) {
  return correction_terms(Method::omega, data, nuis, spec, options, false).total / pair_count(data.size());
}

double correction_mu(const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec,
                     const CorrectionOptions& options) {
  return correction_terms(Method::mu, data, nuis, spec, options, false).total / pair_count(data.size());
}

double correction_main(const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec,
                       const CorrectionOptions& options) {
  return correction_terms(Method::main, data, nuis, spec, options, false).total / pair_count(data.size());
}

double InfluenceVector::mean() const {
  return std::accumulate(zeta.begin(), zeta.end(), 0.0) / static_cast<double>(zeta.size());
}

namespace {

InfluenceVector influence_from(std::vector<double> phi, const PairwiseDecomposition& terms, double correction) {
  const double nm1 = static_cast<double>(phi.size() - 1);
  for (std::size_t i = 0; i < phi.size(); ++i) {
    phi[i] -= (terms.row[i] + terms.col[i]) / nm1 - correction;
  }
  return InfluenceVector{std::move(phi)};
}

}  // namespace

InfluenceVector influence_values(Method method, const Dataset& data, const NuisanceValues& nuis,
                                 const KernelSpec& spec, const CorrectionOptions& options) {
  auto phi = aipw_contributions(data, nuis);
  if (method == Method::aipw) return InfluenceVector{std::move(phi)};
  const auto terms = correction_terms(method, data, nuis, spec, options, true);
  return influence_from(std::move(phi), terms, terms.total / pair_count(data.size()));
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }

std::pair<double, double> wald_interval(double psi, double se, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::invalid_input, "alpha must lie in (0, 1)");
  const double half = normal_quantile(1.0 - alpha / 2.0) * se;
  return {psi - half, psi + half};
}

double interquartile_range(std::span<const double> values) {
  if (values.empty()) return 0.0;
  std::vector<double> v(values.begin(), values.end());
  return quantile_type7(v, 0.75) - quantile_type7(v, 0.25);
}

// Shifted by the first value so that constant input gives exactly 0.
double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(v.size());
  const double shift = v.front();
  double sum = 0.0;
  for (double x : v) sum += x - shift;
  const double mean = sum / n;
  double ss = 0.0;
  for (double x : v) ss += (x - shift - mean) * (x - shift - mean);
  return std::sqrt(ss / (n - 1.0));
}

double robust_scale(std::span<const double> values) {
  const double iqr = interquartile_range(values);
  if (iqr > 0.0) return iqr;
  const double sd = values.size() > 1 ? sample_sd(values) : 0.0;
  return sd > 0.0 ? sd : 1.0;
}

double rate_bandwidth(Method method, const NuisanceValues& nuis) {
  const double n = static_cast<double>(nuis.omega_hat.size());
  switch (method) {
    case Method::omega: return std::pow(n, -0.5) * robust_scale(nuis.omega_hat);
    case Method::mu: return std::pow(n, -0.5) * robust_scale(nuis.mu_hat);
    case Method::main:
    case Method::aipw:
      return std::pow(n, -0.25) * std::sqrt(robust_scale(nuis.omega_hat) * robust_scale(nuis.mu_hat));
  }
  return 1.0;
}

std::vector<double> default_cv_grid(double reference_h) {
  constexpr int points = 16;
  std::vector<double> grid(points);
  const double lo = std::log(0.1);
  const double hi = std::log(2.0);
  for (int k = 0; k < points; ++k) grid[k] = reference_h * std::exp(lo + (hi - lo) * k / (points - 1));
  return grid;
}

double select_bandwidth_loo(std::span<const double> axis1, std::span<const double> axis2,
                            std::span<const double> response, std::span<const double> grid, KernelFamily family) {
  const std::size_t m = axis1.size();
  if (m < 2) throw Error(Errc::too_few_treated, "bandwidth cross-validation needs at least 2 points");
  if (grid.empty()) throw Error(Errc::invalid_input, "bandwidth grid is empty");
  std::vector<double> sorted_grid(grid.begin(), grid.end());
  std::sort(sorted_grid.begin(), sorted_grid.end());

  const double fallback = std::accumulate(response.begin(), response.end(), 0.0) / static_cast<double>(m);
  double scale = 0.0;
  for (double r : response) scale += r * r;
  scale /= static_cast<double>(m);

  const std::vector<double> ones(m, 1.0);
  std::vector<double> errors;
  errors.reserve(sorted_grid.size());
  for (double h : sorted_grid) {
    const auto spec = make_kernel(family, h);
    const auto numer = kernel_row_sums(axis1, axis2, response, spec);
    const auto denom = kernel_row_sums(axis1, axis2, ones, spec);
    double sse = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double pred = denom[i] > 0.0 ? numer[i] / denom[i] : fallback;
      sse += (response[i] - pred) * (response[i] - pred);
    }
    errors.push_back(sse / static_cast<double>(m));
  }
  const double best = *std::min_element(errors.begin(), errors.end());
  const double tolerance = 1e-10 * scale;
  for (std::size_t k = 0; k < errors.size(); ++k) {
    if (errors[k] <= best + tolerance) return sorted_grid[k];
  }
  return sorted_grid.front();
}

double select_bandwidth_cv(const Dataset& data, const NuisanceValues& nuis, std::span<const double> grid,
                           KernelFamily family) {
  std::vector<double> w;
  std::vector<double> m;
  std::vector<double> r;
  const auto a = data.a();
  const auto y = data.y();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (a[i] != 1.0) continue;
    w.push_back(nuis.omega_hat[i]);
    m.push_back(nuis.mu_hat[i]);
    r.push_back(y[i] - nuis.mu_hat[i]);
  }
  if (w.size() < 2) throw Error(Errc::too_few_treated, "bandwidth cross-validation needs at least 2 treated units");
  std::vector<double> owned;
  if (grid.empty()) {
    owned = default_cv_grid(rate_bandwidth(Method::main, nuis));
    grid = owned;
  }
  return select_bandwidth_loo(w, m, r, grid, family);
}

EstimateReport estimate(Method method, const Dataset& data, const NuisanceValues& nuis, const EstimateOptions& options) {
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw Error(Errc::invalid_input, "alpha must lie in (0, 1)");
  EstimateReport report;
  report.method = method;
  report.alpha = options.alpha;
  const std::size_t n = data.size();
  auto phi = aipw_contributions(data, nuis);
  report.psi_dr = std::accumulate(phi.begin(), phi.end(), 0.0) / static_cast<double>(n);

  InfluenceVector influence;
  if (method == Method::aipw) {
    report.bandwidth_source = "none";
    report.psi_hat = report.psi_dr;
    influence.zeta = std::move(phi);
  } else {
    double h = 0.0;
    switch (options.bandwidth) {
      case BandwidthRule::fixed:
        h = options.h;
        report.bandwidth_source = "fixed";
        break;
      case BandwidthRule::rate:
        h = rate_bandwidth(method, nuis);
        report.bandwidth_source = "rate";
        break;
      case BandwidthRule::cross_validation:
        h = select_bandwidth_cv(data, nuis, options.cv_grid, options.family);
        report.bandwidth_source = "cv";
        break;
    }
    const auto spec = make_kernel(options.family, h);
    const auto terms = correction_terms(method, data, nuis, spec, options.correction, true);
    report.h_used = h;
    report.correction = terms.total / pair_count(n);
    report.min_qhat = terms.min_q;
    report.clamp_count = terms.floored;
    report.psi_hat = report.psi_dr - report.correction;
    influence = influence_from(std::move(phi), terms, report.correction);
  }
  report.se = sample_sd(influence.zeta) / std::sqrt(static_cast<double>(n));
  std::tie(report.ci_lo, report.ci_hi) = wald_interval(report.psi_hat, report.se, options.alpha);
  return report;
}

}  // namespace drustat
