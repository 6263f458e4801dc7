#pragma once

// Partially linear logistic model logit P(Y = 1 | A, X) = theta A + m(X):
// the kernel-corrected moment condition and its root.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "drustat/core.hpp"
#include "drustat/estimators.hpp"
#include "drustat/kernels.hpp"

namespace drustat {

/// Binary outcome, real treatment, covariates (n x d, may have 0 columns when
/// nuisances are supplied).
struct PlmSample {
  std::vector<double> y;
  std::vector<double> a;
  Eigen::MatrixXd x;

  std::size_t size() const { return y.size(); }
  bool binary_treatment() const;
};

/// v_hat estimates E(A | Y = 0, X); m_hat estimates m(X) on the log-odds scale.
struct PlmNuisance {
  std::vector<double> v_hat;
  std::vector<double> m_hat;
};

/// Throws MISMATCHED_LENGTH, INVALID_INPUT (n < 2, non-binary y) or
/// NONFINITE_VALUE, naming the offending row.
void validate_plm(const PlmSample& sample, const PlmNuisance& nuis);

/// The empirical moment
///   psi(theta) = P_n[(A - v)(Y e^{-theta A - m} - (1 - Y))] - T(theta),
///   T(theta) = [n(n-1)]^{-1} sum_{i != j} l_i(theta) K_ij / Q_i (1 - Y_j)(A_j - v_j),
/// with l_i(theta) = Y_i e^{-theta A_i - m_i} - (1 - Y_i), the product kernel
/// over (v, m), and Q_i = (n-1)^{-1} sum_{s != i} (1 - Y_s) K_is. The
/// theta-free row sums are computed once, so each evaluation is O(n).
class PlmMoment {
 public:
  /// Throws ALL_QHAT_ZERO when every normalizer vanishes. With `corrected`
  /// false, T is identically 0.
  PlmMoment(const PlmSample& sample, const PlmNuisance& nuis, const KernelSpec& spec,
            const CorrectionOptions& options = {}, bool corrected = true);

  double operator()(double theta) const { return empirical(theta) - correction(theta); }
  double empirical(double theta) const;
  double correction(double theta) const;
  /// d psi / d theta in closed form (T is linear in l_i(theta)).
  double derivative(double theta) const;
  /// true when no observation carries theta: Y_i A_i c_i = 0 for every i.
  bool theta_free() const;

  /// m_i = (A_i - v_i) l_i - [(row_i + col_i) / (n - 1) - T], the empirical
  /// Hajek projection; the mean equals psi(theta).
  std::vector<double> contributions(double theta) const;

  double min_q() const { return min_q_; }
  std::size_t floored() const { return floored_; }
  bool fast_path() const { return fast_path_; }

 private:
  double left(std::size_t i, double theta) const;

  std::vector<double> y_;
  std::vector<double> a_;
  std::vector<double> v_;
  std::vector<double> m_;
  KernelSpec spec_;
  CorrectionOptions options_;
  bool corrected_;
  std::vector<double> right_;
  std::vector<double> row_;       // sum_{j != i} K_ij right_j / Q_i
  std::vector<double> weight_;    // (A_i - v_i) - row_i / (n - 1)
  double min_q_ = 0.0;
  std::size_t floored_ = 0;
  bool fast_path_ = false;
};

struct PlmOptions {
  BandwidthRule bandwidth = BandwidthRule::cross_validation;
  double h = 0.0;
  std::vector<double> cv_grid;
  KernelFamily family = KernelFamily::box;
  double alpha = 0.05;
  CorrectionOptions correction;
  bool corrected = true;
  std::optional<std::pair<double, double>> bracket;  // default [-5, 5], expanded to [-50, 50]
  double derivative_step = 1e-4;
};

struct PlmReport {
  double theta_hat = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double alpha = 0.05;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  std::size_t iterations = 0;
  double moment_at_root = 0.0;
  double correction = 0.0;   // T at theta_hat
  double derivative = 0.0;   // central difference of psi at theta_hat
  std::optional<double> h_used;
  std::string bandwidth_source;
  std::optional<double> min_qhat;
  std::size_t clamp_count = 0;
};

/// Bandwidth for E(A - v | Y = 0, v, m): LOO CV among Y = 0 units. Empty grid
/// means default_cv_grid(n^{-1/4} sqrt(scale(v) scale(m))).
double select_plm_bandwidth_cv(const PlmSample& sample, const PlmNuisance& nuis, std::span<const double> grid = {},
                               KernelFamily family = KernelFamily::box);

/// Root of the moment by TOMS 748 on a bracket with a sign change, grown
/// geometrically from [-5, 5] up to [-50, 50]. Throws DEGENERATE_MOMENT when
/// the moment does not depend on theta and NO_SIGN_CHANGE when no bracket is
/// found. se = sd(m_i) / (sqrt(n) |psi'(theta_hat)|).
PlmReport solve_theta(const PlmSample& sample, const PlmNuisance& nuis, const PlmOptions& options = {});

/// Out-of-fold nuisances. v_hat: A on X among Y = 0 (logistic for binary A,
/// least squares otherwise). m_hat: log-odds of a logistic fit of Y on X among
/// A = 0 for binary A; for real A, the X part of a logistic fit of Y on (A, X).
PlmNuisance crossfit_plm_nuisances(const PlmSample& sample, const FoldAssignment& folds);

/// Test design with d = 1: X ~ Unif(-1, 1), A ~ Bernoulli(expit(a_slope X)),
/// logit P(Y = 1 | A, X) = theta A + m_intercept + m_slope X.
struct PlmDgp {
  double theta = 1.0;
  double a_slope = 0.5;
  double m_intercept = -0.5;
  double m_slope = 1.0;

  double propensity(double x) const;
  double m0(double x) const;
  /// E(A | Y = 0, X = x).
  double v0(double x) const;
};

struct PlmSimulated {
  PlmSample sample;
  PlmNuisance truth;
};

PlmSimulated generate_plm(const PlmDgp& dgp, std::size_t n, std::mt19937_64& rng);

}  // namespace drustat
