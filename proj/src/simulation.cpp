#include "drustat/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>

#include "drustat/parallel.hpp"
#include "drustat/quadrature.hpp"

namespace drustat {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double linear_index(const std::array<double, 3>& beta, double x1, double x2) {
  return beta[0] + beta[1] * x1 + beta[2] * x2;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const std::uint64_t mixed = splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
  return Rng(mixed);
}

double DgpSpec::propensity(double x1, double x2) const { return expit(linear_index(beta_pi, x1, x2)); }

double DgpSpec::outcome(double x1, double x2) const { return expit(linear_index(beta_mu, x1, x2)); }

double true_psi(const DgpSpec& dgp, int nodes_per_axis) {
  const auto rule = gauss_legendre(nodes_per_axis, dgp.covariate_lower, dgp.covariate_upper);
  double total = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < rule.nodes.size(); ++j) inner += rule.weights[j] * dgp.outcome(rule.nodes[i], rule.nodes[j]);
    total += rule.weights[i] * inner;
  }
  const double side = dgp.covariate_upper - dgp.covariate_lower;
  return total / (side * side);
}

SimulatedSample generate_dataset(const DgpSpec& dgp, std::size_t n, Rng& rng) {
  if (!(dgp.covariate_upper > dgp.covariate_lower)) throw Error(Errc::invalid_input, "empty covariate support");
  std::uniform_real_distribution<double> cov(dgp.covariate_lower, dgp.covariate_upper);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Observation> obs;
  obs.reserve(n);
  NuisanceValues truth;
  truth.omega_hat.reserve(n);
  truth.mu_hat.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = cov(rng);
    const double x2 = cov(rng);
    const double u_a = unit(rng);
    const double u_y1 = unit(rng);
    const double u_y0 = unit(rng);
    const double pi = dgp.propensity(x1, x2);
    const double mu = dgp.outcome(x1, x2);
    const int a = u_a < pi ? 1 : 0;
    const double y1 = u_y1 < mu ? 1.0 : 0.0;
    const double y0 = u_y0 < dgp.y0_prob ? 1.0 : 0.0;
    obs.push_back(Observation{a == 1 ? y1 : y0, a, {x1, x2}});
    truth.omega_hat.push_back(1.0 / pi);
    truth.mu_hat.push_back(mu);
  }
  return SimulatedSample{Dataset(std::move(obs)), std::move(truth)};
}

NuisanceValues PerturbedNuisance::evaluate(const Dataset& data, const Bounds& bounds, std::size_t* clamps) const {
  const auto clamp = propensity_clamp(bounds);
  NuisanceValues out;
  out.omega_hat.resize(data.size());
  out.mu_hat.resize(data.size());
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& x = data[i].x;
    double pi = expit(linear_index(beta_pi_hat, x[0], x[1]));
    if (pi < clamp.lower || pi > clamp.upper) {
      pi = std::clamp(pi, clamp.lower, clamp.upper);
      ++clamped;
    }
    out.omega_hat[i] = 1.0 / pi;
    out.mu_hat[i] = expit(linear_index(beta_mu_hat, x[0], x[1]));
  }
  if (clamps != nullptr) *clamps = clamped;
  return out;
}

PerturbedNuisance perturbed_nuisance(const DgpSpec& dgp, std::size_t n, double r_pi, double r_mu, Rng& rng,
                                     PerturbationMode mode) {
  if (!(r_pi >= 0.0) || !(r_mu >= 0.0)) throw Error(Errc::invalid_input, "perturbation rates must be non-negative");
  std::normal_distribution<double> z(0.0, 1.0);
  const double nn = static_cast<double>(n);
  const double scale_pi = std::pow(nn, -r_pi);
  const double scale_mu = std::pow(nn, -r_mu);
  PerturbedNuisance out;
  if (mode == PerturbationMode::per_coordinate) {
    for (std::size_t k = 0; k < 3; ++k) out.beta_pi_hat[k] = dgp.beta_pi[k] + scale_pi * (1.0 + z(rng));
    for (std::size_t k = 0; k < 3; ++k) out.beta_mu_hat[k] = dgp.beta_mu[k] + scale_mu * (1.0 + z(rng));
  } else {
    const double shift_pi = scale_pi * (1.0 + z(rng));
    const double shift_mu = scale_mu * (1.0 + z(rng));
    for (std::size_t k = 0; k < 3; ++k) {
      out.beta_pi_hat[k] = dgp.beta_pi[k] + shift_pi;
      out.beta_mu_hat[k] = dgp.beta_mu[k] + shift_mu;
    }
  }
  return out;
}

std::string_view to_string(SimMethod method) {
  switch (method) {
    case SimMethod::aipw: return "aipw";
    case SimMethod::omega: return "omega";
    case SimMethod::mu: return "mu";
    case SimMethod::main: return "main";
    case SimMethod::oracle: return "oracle";
  }
  return "unknown";
}

SimMethod parse_sim_method(std::string_view name) {
  if (name == "oracle") return SimMethod::oracle;
  switch (parse_method(name)) {
    case Method::aipw: return SimMethod::aipw;
    case Method::omega: return SimMethod::omega;
    case Method::mu: return SimMethod::mu;
    case Method::main: return SimMethod::main;
  }
  return SimMethod::aipw;
}

const CellSummary& SimResults::cell(SimMethod method, std::size_t n) const {
  for (const auto& c : cells) {
    if (c.method == method && c.n == n) return c;
  }
  throw Error(Errc::invalid_input, "no simulation cell for " + std::string(to_string(method)) + " at n = " + std::to_string(n));
}

SimResults run_monte_carlo(const SimulationConfig& config) {
  if (config.reps < 1) throw Error(Errc::invalid_input, "reps must be at least 1");
  if (config.methods.empty()) throw Error(Errc::invalid_input, "no methods requested");
  for (auto n : config.n_values) {
    if (n < 2) throw Error(Errc::invalid_input, "every n must be at least 2");
  }
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw Error(Errc::invalid_input, "alpha must lie in (0, 1)");

  SimResults results;
  results.psi = true_psi(config.dgp);
  const std::size_t methods = config.methods.size();
  const std::size_t sizes = config.n_values.size();
  const std::size_t reps = config.reps;
  results.rows.resize(methods * sizes * reps);
  auto slot = [&](std::size_t m, std::size_t s, std::size_t r) -> ReplicateRow& {
    return results.rows[(m * sizes + s) * reps + r];
  };
  const bool any_corrected = std::any_of(config.methods.begin(), config.methods.end(), [](SimMethod m) {
    return m == SimMethod::omega || m == SimMethod::mu || m == SimMethod::main;
  });

  for (std::size_t s = 0; s < sizes; ++s) {
    const std::size_t n = config.n_values[s];
    parallel_for(reps, [&](std::size_t begin, std::size_t end) {
      for (std::size_t r = begin; r < end; ++r) {
        for (std::size_t m = 0; m < methods; ++m) {
          auto& row = slot(m, s, r);
          row.method = config.methods[m];
          row.n = n;
          row.rep = r;
        }
        auto fail_all = [&](const std::string& why, bool corrected_only) {
          for (std::size_t m = 0; m < methods; ++m) {
            const auto method = config.methods[m];
            const bool corrected = method != SimMethod::aipw && method != SimMethod::oracle;
            if (corrected_only && !corrected) continue;
            slot(m, s, r).failed = true;
            slot(m, s, r).failure = why;
          }
        };

        auto rng = stream_rng(config.seed, n, r);
        std::size_t clamps = 0;
        std::optional<SimulatedSample> sample;
        NuisanceValues nuis;
        try {
          sample.emplace(generate_dataset(config.dgp, n, rng));
          const auto perturbed = perturbed_nuisance(config.dgp, n, config.r_pi, config.r_mu, rng, config.perturbation);
          nuis = perturbed.evaluate(sample->data, config.bounds, &clamps);
          validate(sample->data, nuis, config.bounds);
        } catch (const Error& e) {
          fail_all(e.what(), false);
          continue;
        }

        std::optional<double> shared_h;
        if (any_corrected && config.bandwidth == BandwidthRule::cross_validation) {
          try {
            shared_h = select_bandwidth_cv(sample->data, nuis, {}, config.family);
          } catch (const Error& e) {
            fail_all(e.what(), true);
          }
        }

        for (std::size_t m = 0; m < methods; ++m) {
          auto& row = slot(m, s, r);
          if (row.failed) continue;
          const SimMethod method = config.methods[m];
          EstimateOptions options;
          options.alpha = config.alpha;
          options.family = config.family;
          if (shared_h) {
            options.bandwidth = BandwidthRule::fixed;
            options.h = *shared_h;
          } else {
            options.bandwidth = config.bandwidth;
          }
          try {
            EstimateReport report;
            switch (method) {
              case SimMethod::oracle: report = estimate(Method::aipw, sample->data, sample->truth, options); break;
              case SimMethod::aipw: report = estimate(Method::aipw, sample->data, nuis, options); break;
              case SimMethod::omega: report = estimate(Method::omega, sample->data, nuis, options); break;
              case SimMethod::mu: report = estimate(Method::mu, sample->data, nuis, options); break;
              case SimMethod::main: report = estimate(Method::main, sample->data, nuis, options); break;
            }
            row.estimate = report.psi_hat;
            row.error = report.psi_hat - results.psi;
            row.sqrt_n_error = std::sqrt(static_cast<double>(n)) * row.error;
            row.ci_lo = report.ci_lo;
            row.ci_hi = report.ci_hi;
            row.hit = report.ci_lo <= results.psi && results.psi <= report.ci_hi;
            row.clamps = (method == SimMethod::oracle ? 0 : clamps) + report.clamp_count;
          } catch (const Error& e) {
            row.failed = true;
            row.failure = e.what();
          }
        }
      }
    });
  }

  for (std::size_t m = 0; m < methods; ++m) {
    for (std::size_t s = 0; s < sizes; ++s) {
      CellSummary cell;
      cell.method = config.methods[m];
      cell.n = config.n_values[s];
      double hits = 0.0;
      double sum_error = 0.0;
      double sum_sq_error = 0.0;
      double sum_width = 0.0;
      std::vector<double> scaled;
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& row = slot(m, s, r);
        if (row.failed) {
          ++cell.failures;
          continue;
        }
        ++cell.completed;
        hits += row.hit ? 1.0 : 0.0;
        sum_error += row.error;
        sum_sq_error += row.error * row.error;
        sum_width += row.ci_hi - row.ci_lo;
        cell.clamp_total += row.clamps;
        scaled.push_back(row.sqrt_n_error);
      }
      if (cell.completed > 0) {
        const double c = static_cast<double>(cell.completed);
        cell.coverage = hits / c;
        cell.mean_error = sum_error / c;
        cell.rmse = std::sqrt(sum_sq_error / c);
        cell.mean_width = sum_width / c;
        if (scaled.size() > 1) {
          double mean = 0.0;
          for (double v : scaled) mean += v;
          mean /= c;
          double ss = 0.0;
          for (double v : scaled) ss += (v - mean) * (v - mean);
          cell.sd_sqrt_n_error = std::sqrt(ss / (c - 1.0));
        }
      }
      results.cells.push_back(cell);
    }
  }
  return results;
}

void write_errors_csv(const SimResults& results, std::ostream& out) {
  out << "method,n,rep,error,sqrt_n_error,ci_lo,ci_hi,hit\n";
  for (const auto& row : results.rows) {
    if (row.failed) continue;
    out << to_string(row.method) << ',' << row.n << ',' << row.rep << ',' << format_double(row.error) << ','
        << format_double(row.sqrt_n_error) << ',' << format_double(row.ci_lo) << ',' << format_double(row.ci_hi) << ','
        << (row.hit ? 1 : 0) << '\n';
  }
}

void write_coverage_csv(const SimResults& results, std::ostream& out) {
  out << "method,n,coverage,mean_width,failures\n";
  for (const auto& cell : results.cells) {
    out << to_string(cell.method) << ',' << cell.n << ',' << format_double(cell.coverage) << ','
        << format_double(cell.mean_width) << ',' << cell.failures << '\n';
  }
}

}  // namespace drustat
