#include "drustat/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace drustat {
namespace {

bool finite(double v) { return std::isfinite(v); }

// log(1 + exp(eta)) without overflow.
double softplus(double eta) {
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

// Columns of `covariates` that vary over the rows with positive weight.
std::vector<Eigen::Index> varying_columns(const Eigen::MatrixXd& covariates,
                                          const std::vector<double>& weights) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index c = 0; c < covariates.cols(); ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Eigen::Index r = 0; r < covariates.rows(); ++r) {
      if (weights[static_cast<std::size_t>(r)] <= 0.0) continue;
      lo = std::min(lo, covariates(r, c));
      hi = std::max(hi, covariates(r, c));
    }
    if (hi > lo) cols.push_back(c);
  }
  return cols;
}

Eigen::MatrixXd design_matrix(const Eigen::MatrixXd& covariates, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd design(covariates.rows(), static_cast<Eigen::Index>(cols.size()) + 1);
  design.col(0).setOnes();
  for (std::size_t k = 0; k < cols.size(); ++k) {
    design.col(static_cast<Eigen::Index>(k) + 1) = covariates.col(cols[k]);
  }
  return design;
}

// Expands coefficients over the active columns back to the full [1, x] layout.
Eigen::VectorXd expand(const Eigen::VectorXd& active, const std::vector<Eigen::Index>& cols, Eigen::Index d) {
  Eigen::VectorXd full = Eigen::VectorXd::Zero(d + 1);
  full(0) = active(0);
  for (std::size_t k = 0; k < cols.size(); ++k) full(cols[k] + 1) = active(static_cast<Eigen::Index>(k) + 1);
  return full;
}

double dot_with_intercept(const Eigen::VectorXd& beta, std::span<const double> x) {
  double eta = beta(0);
  for (std::size_t k = 0; k < x.size(); ++k) eta += beta(static_cast<Eigen::Index>(k) + 1) * x[k];
  return eta;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

}  // namespace

double expit(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

Dataset::Dataset(std::vector<Observation> observations, const Bounds& bounds) : obs_(std::move(observations)) {
  if (obs_.size() < 2) throw Error(Errc::invalid_input, "need at least 2 observations, got " + std::to_string(obs_.size()));
  dim_ = obs_.front().x.size();
  y_.reserve(obs_.size());
  a_.reserve(obs_.size());
  for (std::size_t i = 0; i < obs_.size(); ++i) {
    const auto& o = obs_[i];
    if (o.x.size() != dim_) {
      throw Error(Errc::mismatched_length,
                  "observation " + std::to_string(i) + " has " + std::to_string(o.x.size()) +
                      " covariates, expected " + std::to_string(dim_),
                  i);
    }
    if (o.a != 0 && o.a != 1) throw Error(Errc::invalid_input, "treatment must be 0 or 1 at observation " + std::to_string(i), i);
    if (!finite(o.y) || !std::all_of(o.x.begin(), o.x.end(), finite)) {
      throw Error(Errc::nonfinite_value, "non-finite value at observation " + std::to_string(i), i);
    }
    if (std::abs(o.y) > bounds.y_max) {
      throw Error(Errc::out_of_bounds, "|y| exceeds " + std::to_string(bounds.y_max) + " at observation " + std::to_string(i), i);
    }
    y_.push_back(o.y);
    a_.push_back(static_cast<double>(o.a));
  }
}

Eigen::MatrixXd Dataset::covariates() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(obs_.size()), static_cast<Eigen::Index>(dim_));
  for (std::size_t i = 0; i < obs_.size(); ++i) {
    for (std::size_t k = 0; k < dim_; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = obs_[i].x[k];
  }
  return m;
}

bool Dataset::binary_outcome() const noexcept {
  return std::all_of(y_.begin(), y_.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

ValidatedInput validate(Dataset data, NuisanceValues nuisance, const Bounds& bounds) {
  const std::size_t n = data.size();
  if (nuisance.omega_hat.size() != n || nuisance.mu_hat.size() != n) {
    throw Error(Errc::mismatched_length, "nuisance vectors have lengths " + std::to_string(nuisance.omega_hat.size()) +
                                             " and " + std::to_string(nuisance.mu_hat.size()) + ", dataset has " +
                                             std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double w = nuisance.omega_hat[i];
    const double m = nuisance.mu_hat[i];
    if (!finite(w) || !finite(m)) throw Error(Errc::nonfinite_value, "non-finite nuisance at observation " + std::to_string(i), i);
    if (w < 1.0) {
      throw Error(Errc::omega_below_one, "omega_hat = " + std::to_string(w) + " < 1 at observation " + std::to_string(i), i);
    }
    if (w > bounds.omega_max) {
      throw Error(Errc::out_of_bounds, "omega_hat exceeds " + std::to_string(bounds.omega_max) + " at observation " + std::to_string(i), i);
    }
    if (std::abs(m) > bounds.mu_max) {
      throw Error(Errc::out_of_bounds, "|mu_hat| exceeds " + std::to_string(bounds.mu_max) + " at observation " + std::to_string(i), i);
    }
  }
  const auto a = data.a();
  if (std::none_of(a.begin(), a.end(), [](double v) { return v == 1.0; })) {
    throw Error(Errc::no_treated, "no observation has a = 1");
  }
  return ValidatedInput{std::move(data), std::move(nuisance)};
}

std::size_t FoldAssignment::fold_size(int fold) const {
  return static_cast<std::size_t>(std::count(fold_of.begin(), fold_of.end(), fold));
}

FoldAssignment make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<std::size_t>(k) > n) {
    throw Error(Errc::k_out_of_range, "fold count " + std::to_string(k) + " outside [2, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldAssignment folds;
  folds.k = k;
  folds.fold_of.assign(n, 0);
  for (std::size_t pos = 0; pos < n; ++pos) folds.fold_of[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
  return folds;
}

double LogisticModel::linear_predictor(std::span<const double> x) const { return dot_with_intercept(beta, x); }

double LogisticModel::predict(std::span<const double> x) const { return expit(linear_predictor(x)); }

double LinearModel::predict(std::span<const double> x) const { return dot_with_intercept(beta, x); }

LogisticModel fit_logistic(const Eigen::MatrixXd& covariates, std::span<const double> labels,
                           std::span<const double> weights, const LogisticOptions& options) {
  const auto n = static_cast<std::size_t>(covariates.rows());
  if (labels.size() != n) throw Error(Errc::mismatched_length, "labels and covariates differ in length");
  if (!weights.empty() && weights.size() != n) throw Error(Errc::mismatched_length, "weights and covariates differ in length");

  std::vector<double> w(n, 1.0);
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
  double total_weight = 0.0;
  double positive = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw Error(Errc::invalid_input, "logistic labels must be 0 or 1");
    if (!(w[i] >= 0.0) || !finite(w[i])) throw Error(Errc::invalid_input, "weights must be finite and non-negative");
    total_weight += w[i];
    positive += w[i] * labels[i];
  }
  if (total_weight <= 0.0 || positive <= 0.0 || positive >= total_weight) {
    throw Error(Errc::one_class, "logistic fit needs both label classes");
  }

  const auto cols = varying_columns(covariates, w);
  const Eigen::MatrixXd design = design_matrix(covariates, cols);
  const Eigen::Index p = design.cols();
  const Eigen::Map<const Eigen::VectorXd> y(labels.data(), static_cast<Eigen::Index>(n));
  const Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(n));

  auto log_likelihood = [&](const Eigen::VectorXd& eta) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += wv(i) * (y(i) * eta(i) - softplus(eta(i)));
    return ll / total_weight;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  beta(0) = logit(positive / total_weight);
  Eigen::VectorXd eta = design * beta;
  double ll = log_likelihood(eta);

  for (int iter = 0; iter <= options.max_iterations; ++iter) {
    Eigen::VectorXd prob = eta.unaryExpr([](double e) { return expit(e); });
    const Eigen::VectorXd score = design.transpose() * (wv.cwiseProduct(y - prob)) / total_weight;
    if (score.cwiseAbs().maxCoeff() <= options.score_tolerance) {
      double worst_residual = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (w[i] > 0.0) worst_residual = std::max(worst_residual, std::abs(labels[i] - prob(static_cast<Eigen::Index>(i))));
      }
      if (worst_residual < 1e-6) throw Error(Errc::separation_or_singular, "labels are perfectly separated");
      return LogisticModel{expand(beta, cols, covariates.cols())};
    }
    if (iter == options.max_iterations) break;

    const Eigen::VectorXd curvature = wv.cwiseProduct(prob.cwiseProduct(Eigen::VectorXd::Ones(prob.size()) - prob));
    const Eigen::MatrixXd hessian = design.transpose() * curvature.asDiagonal() * design / total_weight;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
    const Eigen::VectorXd pivots = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || pivots.minCoeff() <= 1e-13 * std::max(1.0, pivots.maxCoeff())) {
      throw Error(Errc::separation_or_singular, "information matrix is singular");
    }
    const Eigen::VectorXd step = ldlt.solve(score);

    double scale = 1.0;
    Eigen::VectorXd candidate = beta + step;
    Eigen::VectorXd candidate_eta = design * candidate;
    double candidate_ll = log_likelihood(candidate_eta);
    for (int halving = 0; halving < 40 && candidate_ll < ll - 1e-15 * std::abs(ll); ++halving) {
      scale *= 0.5;
      candidate = beta + scale * step;
      candidate_eta = design * candidate;
      candidate_ll = log_likelihood(candidate_eta);
    }
    beta = std::move(candidate);
    eta = std::move(candidate_eta);
    ll = candidate_ll;
    if (!beta.allFinite()) break;
  }
  throw Error(Errc::separation_or_singular, "Newton iterations did not converge");
}

LinearModel fit_least_squares(const Eigen::MatrixXd& covariates, std::span<const double> response) {
  const auto n = static_cast<std::size_t>(covariates.rows());
  if (response.size() != n) throw Error(Errc::mismatched_length, "response and covariates differ in length");
  if (n == 0) throw Error(Errc::invalid_input, "least squares needs at least one row");
  const std::vector<double> ones(n, 1.0);
  const auto cols = varying_columns(covariates, ones);
  const Eigen::MatrixXd design = design_matrix(covariates, cols);
  const Eigen::Map<const Eigen::VectorXd> y(response.data(), static_cast<Eigen::Index>(n));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < design.cols()) throw Error(Errc::separation_or_singular, "least squares design is rank deficient");
  return LinearModel{expand(qr.solve(y), cols, covariates.cols())};
}

PropensityClamp propensity_clamp(const Bounds& bounds) {
  return {std::max(1.0 / bounds.omega_max, 1e-3), 1.0 - 1e-6};
}

CrossfitResult crossfit_nuisances(const Dataset& data, const FoldAssignment& folds, const Bounds& bounds) {
  const std::size_t n = data.size();
  if (folds.fold_of.size() != n) throw Error(Errc::mismatched_length, "fold assignment does not match dataset size");
  for (int f = 0; f < folds.k; ++f) {
    if (folds.fold_size(f) == 0) throw Error(Errc::k_out_of_range, "fold " + std::to_string(f) + " is empty");
  }

  const Eigen::MatrixXd x = data.covariates();
  const auto y = data.y();
  const auto a = data.a();
  const bool binary = data.binary_outcome();
  const auto clamp = propensity_clamp(bounds);

  CrossfitResult result;
  result.values.omega_hat.assign(n, 0.0);
  result.values.mu_hat.assign(n, 0.0);

  for (int f = 0; f < folds.k; ++f) {
    std::vector<std::size_t> train;
    std::vector<std::size_t> train_treated;
    for (std::size_t i = 0; i < n; ++i) {
      if (folds.fold_of[i] == f) continue;
      train.push_back(i);
      if (a[i] == 1.0) train_treated.push_back(i);
    }
    std::vector<double> train_a;
    std::vector<double> treated_y;
    for (auto i : train) train_a.push_back(a[i]);
    for (auto i : train_treated) treated_y.push_back(y[i]);

    const LogisticModel propensity = fit_logistic(rows_of(x, train), train_a);
    const Eigen::MatrixXd treated_x = rows_of(x, train_treated);
    LogisticModel outcome_logit;
    LinearModel outcome_ols;
    if (binary) {
      outcome_logit = fit_logistic(treated_x, treated_y);
    } else {
      outcome_ols = fit_least_squares(treated_x, treated_y);
    }

    for (std::size_t i = 0; i < n; ++i) {
      if (folds.fold_of[i] != f) continue;
      const auto& xi = data[i].x;
      double pi = propensity.predict(xi);
      if (pi < clamp.lower || pi > clamp.upper) {
        pi = std::clamp(pi, clamp.lower, clamp.upper);
        ++result.propensity_clamps;
      }
      result.values.omega_hat[i] = 1.0 / pi;

      double mu = binary ? outcome_logit.predict(xi) : outcome_ols.predict(xi);
      if (std::abs(mu) > bounds.mu_max) {
        mu = std::clamp(mu, -bounds.mu_max, bounds.mu_max);
        ++result.outcome_clamps;
      }
      result.values.mu_hat[i] = mu;
    }
  }
  return result;
}

}  // namespace drustat
