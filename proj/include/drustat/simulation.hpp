#pragma once

// Monte Carlo coverage study on a two-covariate logistic data-generating
// process with perturbed-coefficient nuisance estimates.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "drustat/core.hpp"
#include "drustat/estimators.hpp"

namespace drustat {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream, index); the same triple always
/// yields the same sequence regardless of which thread asks for it.
Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// X ~ Unif(lower, upper)^2, A ~ Bernoulli(pi(X)), Y = A Y1 + (1 - A) Y0 with
/// Y1 ~ Bernoulli(mu(X)) and Y0 ~ Bernoulli(y0_prob); pi and mu are expit of
/// [1 x]' beta. The default unit square gives E{mu(X)} = 0.6616.
struct DgpSpec {
  std::array<double, 3> beta_pi{-0.5, 2.0, 0.5};
  std::array<double, 3> beta_mu{-2.5, 5.0, 2.0};
  double y0_prob = 0.5;
  double covariate_lower = 0.0;
  double covariate_upper = 1.0;

  double propensity(double x1, double x2) const;
  double outcome(double x1, double x2) const;
};

/// E{mu(X)} by tensor Gauss-Legendre quadrature over the covariate square.
double true_psi(const DgpSpec& dgp, int nodes_per_axis = 64);

struct SimulatedSample {
  Dataset data;
  NuisanceValues truth;  // omega(X_i) = 1 / pi(X_i), mu(X_i)
};

SimulatedSample generate_dataset(const DgpSpec& dgp, std::size_t n, Rng& rng);

enum class PerturbationMode {
  per_coordinate,  // an independent normal draw added to each coefficient
  common_scalar,   // one normal draw added to every coefficient
};

/// Nuisance estimates expit([1 x]' beta_hat) with beta_hat = beta + N(n^-r, n^-2r).
struct PerturbedNuisance {
  std::array<double, 3> beta_pi_hat{};
  std::array<double, 3> beta_mu_hat{};

  /// omega_hat = 1 / clamp(pi_hat); `clamps` counts clamped propensities.
  NuisanceValues evaluate(const Dataset& data, const Bounds& bounds = {}, std::size_t* clamps = nullptr) const;
};

PerturbedNuisance perturbed_nuisance(const DgpSpec& dgp, std::size_t n, double r_pi, double r_mu, Rng& rng,
                                     PerturbationMode mode = PerturbationMode::per_coordinate);

enum class SimMethod { aipw, omega, mu, main, oracle };

std::string_view to_string(SimMethod method);
SimMethod parse_sim_method(std::string_view name);

struct SimulationConfig {
  std::vector<std::size_t> n_values{500, 1000, 1500, 2000};
  std::size_t reps = 500;
  double r_pi = 0.3;
  double r_mu = 0.3;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  std::vector<SimMethod> methods{SimMethod::aipw, SimMethod::omega, SimMethod::mu, SimMethod::main};
  DgpSpec dgp;
  PerturbationMode perturbation = PerturbationMode::per_coordinate;
  BandwidthRule bandwidth = BandwidthRule::cross_validation;
  KernelFamily family = KernelFamily::box;
  Bounds bounds;
};

struct ReplicateRow {
  SimMethod method = SimMethod::aipw;
  std::size_t n = 0;
  std::size_t rep = 0;
  bool failed = false;
  std::string failure;
  double estimate = 0.0;
  double error = 0.0;
  double sqrt_n_error = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool hit = false;
  std::size_t clamps = 0;
};

struct CellSummary {
  SimMethod method = SimMethod::aipw;
  std::size_t n = 0;
  std::size_t completed = 0;
  std::size_t failures = 0;
  double coverage = 0.0;
  double mean_error = 0.0;
  double rmse = 0.0;
  double sd_sqrt_n_error = 0.0;
  double mean_width = 0.0;
  std::size_t clamp_total = 0;
};

struct SimResults {
  double psi = 0.0;
  std::vector<CellSummary> cells;  // methods x n_values, method-major
  std::vector<ReplicateRow> rows;  // every (method, n, rep), failed ones included

  const CellSummary& cell(SimMethod method, std::size_t n) const;
};

/// Runs every replicate of every n. Replicate (n, rep) draws its data and its
/// perturbed coefficients from stream_rng(seed, n, rep); one draw is shared
/// by all methods of that replicate. The corrected estimators share one
/// bandwidth per replicate. Estimator failures mark the row failed.
SimResults run_monte_carlo(const SimulationConfig& config);

/// method,n,rep,error,sqrt_n_error,ci_lo,ci_hi,hit (completed rows only)
void write_errors_csv(const SimResults& results, std::ostream& out);
/// method,n,coverage,mean_width,failures
void write_coverage_csv(const SimResults& results, std::ostream& out);

}  // namespace drustat
