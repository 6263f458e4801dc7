#pragma once

// Data model, input validation, cross-fitting folds, and the built-in
// parametric nuisance learners.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "drustat/error.hpp"

namespace drustat {

struct Observation {
  double y = 0.0;
  int a = 0;
  std::vector<double> x;
};

/// Configured boundedness constants. M_y bounds |y|, M_omega bounds the
/// inverse propensity from above, M_mu bounds |mu_hat|.
struct Bounds {
  double y_max = 100.0;
  double omega_max = 100.0;
  double mu_max = 100.0;
};

/// An ordered sample of observations with a common covariate dimension.
/// Construction checks the structural invariants (n >= 2, shared dimension,
/// binary treatment, finite values within the outcome bound); whether anyone
/// is treated is checked by validate().
class Dataset {
 public:
  explicit Dataset(std::vector<Observation> observations, const Bounds& bounds = {});

  std::size_t size() const noexcept { return obs_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const Observation& operator[](std::size_t i) const { return obs_[i]; }
  const std::vector<Observation>& observations() const noexcept { return obs_; }

  std::span<const double> y() const noexcept { return y_; }
  std::span<const double> a() const noexcept { return a_; }

  /// n x d covariate matrix (no intercept column).
  Eigen::MatrixXd covariates() const;
  /// true when every outcome is 0 or 1.
  bool binary_outcome() const noexcept;

 private:
  std::vector<Observation> obs_;
  std::size_t dim_ = 0;
  std::vector<double> y_;
  std::vector<double> a_;
};

struct NuisanceValues {
  std::vector<double> omega_hat;
  std::vector<double> mu_hat;
};

struct ValidatedInput {
  Dataset data;
  NuisanceValues nuisance;
};

/// Checks the joint invariants of a dataset and its nuisance evaluations.
ValidatedInput validate(Dataset data, NuisanceValues nuisance, const Bounds& bounds = {});

struct FoldAssignment {
  std::vector<int> fold_of;
  int k = 0;

  std::size_t fold_size(int fold) const;
};

/// Balanced random partition of {0..n-1} into k folds; a pure function of (n, k, seed).
FoldAssignment make_folds(std::size_t n, int k, std::uint64_t seed);

struct LogisticModel {
  Eigen::VectorXd beta;  // intercept first

  double linear_predictor(std::span<const double> x) const;
  double predict(std::span<const double> x) const;
};

struct LinearModel {
  Eigen::VectorXd beta;  // intercept first

  double predict(std::span<const double> x) const;
};

double expit(double eta);
double logit(double p);

struct LogisticOptions {
  double score_tolerance = 1e-8;
  int max_iterations = 100;
};

/// Logistic maximum likelihood by Newton/IRLS with step halving.
///
/// `covariates` is n x d without the intercept; labels are 0/1. Columns that
/// are constant are aliased with the intercept and get coefficient 0.
/// Convergence is declared when the largest component of the weighted
/// average score drops to `score_tolerance`.
LogisticModel fit_logistic(const Eigen::MatrixXd& covariates, std::span<const double> labels,
                           std::span<const double> weights = {}, const LogisticOptions& options = {});

/// Ordinary least squares on [1, x]. Constant columns get coefficient 0.
LinearModel fit_least_squares(const Eigen::MatrixXd& covariates, std::span<const double> response);

struct CrossfitResult {
  NuisanceValues values;
  std::size_t propensity_clamps = 0;
  std::size_t outcome_clamps = 0;
};

/// Propensity clamp interval [lower, upper] used before inversion.
struct PropensityClamp {
  double lower;
  double upper;
};
PropensityClamp propensity_clamp(const Bounds& bounds);

/// Out-of-fold nuisance evaluations: observation i is scored by models fitted
/// on every fold except its own. The propensity model regresses A on X; the
/// outcome model regresses Y on X among treated units (logistic when Y is
/// binary, least squares otherwise).
CrossfitResult crossfit_nuisances(const Dataset& data, const FoldAssignment& folds,
                                  const Bounds& bounds = {});

}  // namespace drustat
