#pragma once

// Doubly-robust estimators of E{mu(X)}: the AIPW estimator and its three
// kernel U-statistic corrections, with influence-based standard errors,
// Wald intervals and bandwidth selection.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drustat/core.hpp"
#include "drustat/kernels.hpp"

namespace drustat {

enum class Method { aipw, omega, mu, main };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct CorrectionOptions {
  double q_floor = kDefaultQFloor;
  SumPath path = SumPath::automatic;
};

/// Per-observation AIPW terms a_i w_i (y_i - m_i) + m_i.
std::vector<double> aipw_contributions(const Dataset& data, const NuisanceValues& nuis);
double aipw(const Dataset& data, const NuisanceValues& nuis);

/// The method's double sum sum_{i != j} kappa_ij, undivided, with row and
/// column sums. Throws ALL_QHAT_ZERO when every normalizer vanishes.
PairwiseDecomposition correction_terms(Method method, const Dataset& data, const NuisanceValues& nuis,
                                       const KernelSpec& spec, const CorrectionOptions& options = {},
                                       bool with_columns = true);

/// T = [n(n-1)]^{-1} sum_{i != j} kappa_ij for the respective method.
double correction_omega(const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec,
                        const CorrectionOptions& options = {});
double correction_mu(const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec,
                     const CorrectionOptions& options = {});
double correction_main(const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec,
                       const CorrectionOptions& options = {});

struct InfluenceVector {
  std::vector<double> zeta;
  double mean() const;
};

/// zeta_i = phi_i - u_i with u_i = (n-1)^{-1} sum_{j != i} (kappa_ij + kappa_ji) - T,
/// the empirical Hajek projection of the correction. mean(zeta) equals the
/// point estimate. For aipw, zeta_i = phi_i and `spec` is ignored.
InfluenceVector influence_values(Method method, const Dataset& data, const NuisanceValues& nuis,
                                 const KernelSpec& spec, const CorrectionOptions& options = {});

enum class BandwidthRule { fixed, rate, cross_validation };

struct EstimateOptions {
  BandwidthRule bandwidth = BandwidthRule::cross_validation;
  double h = 0.0;                // used when bandwidth == fixed
  std::vector<double> cv_grid;   // empty: default_cv_grid()
  KernelFamily family = KernelFamily::box;
  double alpha = 0.05;
  CorrectionOptions correction;
};

struct EstimateReport {
  Method method = Method::aipw;
  double psi_hat = 0.0;
  double psi_dr = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double alpha = 0.05;
  std::optional<double> h_used;
  std::string bandwidth_source;  // "none", "fixed", "rate", "cv"
  double correction = 0.0;
  std::optional<double> min_qhat;
  std::size_t clamp_count = 0;
};

EstimateReport estimate(Method method, const Dataset& data, const NuisanceValues& nuis,
                        const EstimateOptions& options = {});

/// Wald interval psi -/+ z_{1-alpha/2} se.
std::pair<double, double> wald_interval(double psi, double se, double alpha);
double normal_quantile(double p);

double interquartile_range(std::span<const double> values);

/// IQR (type 7), falling back to the sample standard deviation and then to 1.
double robust_scale(std::span<const double> values);

/// Standard deviation with the n - 1 denominator.
double sample_sd(std::span<const double> values);

/// Rate-based default: n^{-1/2} IQR(omega_hat) for omega, n^{-1/2} IQR(mu_hat)
/// for mu, and n^{-1/4} times the geometric mean of both IQRs for main.
double rate_bandwidth(Method method, const NuisanceValues& nuis);

/// 16 geometric points over [0.1, 2] times the main-estimator rate bandwidth.
std::vector<double> default_cv_grid(double reference_h);

/// Leave-one-out CV of a Nadaraya-Watson regression of `response` on the
/// (1- or 2-D) centers with the product kernel; returns the grid value with
/// the smallest mean squared LOO error, ties going to the smallest h. Points
/// whose LOO window is empty are predicted by the overall response mean.
double select_bandwidth_loo(std::span<const double> axis1, std::span<const double> axis2,
                            std::span<const double> response, std::span<const double> grid,
                            KernelFamily family = KernelFamily::box);

/// Bandwidth for E(Y - mu_hat | A = 1, omega_hat, mu_hat): LOO CV among
/// treated units. Empty grid means default_cv_grid(rate_bandwidth(main)).
double select_bandwidth_cv(const Dataset& data, const NuisanceValues& nuis, std::span<const double> grid = {},
                           KernelFamily family = KernelFamily::box);

}  // namespace drustat
