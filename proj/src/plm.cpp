#include "drustat/plm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include <boost/math/tools/roots.hpp>

namespace drustat {
namespace {

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

std::vector<double> select(const std::vector<double>& v, const std::vector<std::size_t>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v[r]);
  return out;
}

std::span<const double> row_span(const Eigen::MatrixXd& x, std::size_t i, std::vector<double>& buffer) {
  buffer.resize(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) buffer[static_cast<std::size_t>(c)] = x(static_cast<Eigen::Index>(i), c);
  return buffer;
}

void check_finite(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw Error(Errc::nonfinite_value, std::string(what) + " is not finite at row " + std::to_string(i), i);
  }
}

double pair_count(std::size_t n) { return static_cast<double>(n) * static_cast<double>(n - 1); }

}  // namespace

bool PlmSample::binary_treatment() const {
  return std::all_of(a.begin(), a.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

void validate_plm(const PlmSample& sample, const PlmNuisance& nuis) {
  const std::size_t n = sample.y.size();
  if (sample.a.size() != n || static_cast<std::size_t>(sample.x.rows()) != n || nuis.v_hat.size() != n ||
      nuis.m_hat.size() != n) {
    throw Error(Errc::mismatched_length, "y, a, x, v_hat and m_hat must have the same number of rows");
  }
  if (n < 2) throw Error(Errc::invalid_input, "need at least 2 observations");
  for (std::size_t i = 0; i < n; ++i) {
    if (sample.y[i] != 0.0 && sample.y[i] != 1.0) {
      throw Error(Errc::invalid_input, "y must be 0 or 1, row " + std::to_string(i), i);
    }
  }
  check_finite(sample.a, "a");
  check_finite(nuis.v_hat, "v_hat");
  check_finite(nuis.m_hat, "m_hat");
  for (Eigen::Index r = 0; r < sample.x.rows(); ++r) {
    if (!sample.x.row(r).allFinite()) {
      const auto i = static_cast<std::size_t>(r);
      throw Error(Errc::nonfinite_value, "x is not finite at row " + std::to_string(i), i);
    }
  }
}

PlmMoment::PlmMoment(const PlmSample& sample, const PlmNuisance& nuis, const KernelSpec& spec,
                     const CorrectionOptions& options, bool corrected)
    : y_(sample.y), a_(sample.a), v_(nuis.v_hat), m_(nuis.m_hat), spec_(spec), options_(options),
      corrected_(corrected) {
  const std::size_t n = y_.size();
  right_.resize(n);
  for (std::size_t j = 0; j < n; ++j) right_[j] = (1.0 - y_[j]) * (a_[j] - v_[j]);
  row_.assign(n, 0.0);
  if (corrected_) {
    const std::vector<double> ones(n, 1.0);
    std::vector<double> density(n);
    for (std::size_t s = 0; s < n; ++s) density[s] = 1.0 - y_[s];
    PairwiseTerms terms;
    terms.left = ones;
    terms.right = right_;
    terms.axis1 = v_;
    terms.axis2 = m_;
    terms.density_weights = density;
    terms.q_floor = options_.q_floor;
    auto out = pairwise_decompose(terms, spec_, PairMode::product_2d, options_.path, false);
    if (out.all_q_zero) {
      throw Error(Errc::all_qhat_zero, "every kernel normalizer is zero at h = " + std::to_string(spec_.h));
    }
    row_ = std::move(out.row);
    min_q_ = out.min_q;
    floored_ = out.floored;
    fast_path_ = out.fast_path;
  }
  const double nm1 = static_cast<double>(n - 1);
  weight_.resize(n);
  for (std::size_t i = 0; i < n; ++i) weight_[i] = (a_[i] - v_[i]) - row_[i] / nm1;
}

double PlmMoment::left(std::size_t i, double theta) const {
  return y_[i] * std::exp(-theta * a_[i] - m_[i]) - (1.0 - y_[i]);
}

double PlmMoment::empirical(double theta) const {
  double total = 0.0;
  for (std::size_t i = 0; i < y_.size(); ++i) total += (a_[i] - v_[i]) * left(i, theta);
  return total / static_cast<double>(y_.size());
}

double PlmMoment::correction(double theta) const {
  if (!corrected_) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < y_.size(); ++i) total += left(i, theta) * row_[i];
  return total / pair_count(y_.size());
}

double PlmMoment::derivative(double theta) const {
  double total = 0.0;
  for (std::size_t i = 0; i < y_.size(); ++i) {
    if (y_[i] == 0.0) continue;
    total -= weight_[i] * a_[i] * std::exp(-theta * a_[i] - m_[i]);
  }
  return total / static_cast<double>(y_.size());
}

bool PlmMoment::theta_free() const {
  for (std::size_t i = 0; i < y_.size(); ++i) {
    if (y_[i] * a_[i] * weight_[i] != 0.0) return false;
  }
  return true;
}

std::vector<double> PlmMoment::contributions(double theta) const {
  const std::size_t n = y_.size();
  std::vector<double> l(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = left(i, theta);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (a_[i] - v_[i]) * l[i];
  if (!corrected_) return out;
  std::vector<double> density(n);
  for (std::size_t s = 0; s < n; ++s) density[s] = 1.0 - y_[s];
  PairwiseTerms terms;
  terms.left = l;
  terms.right = right_;
  terms.axis1 = v_;
  terms.axis2 = m_;
  terms.density_weights = density;
  terms.q_floor = options_.q_floor;
  const auto dec = pairwise_decompose(terms, spec_, PairMode::product_2d, options_.path, true);
  const double t = dec.total / pair_count(n);
  const double nm1 = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) out[i] -= (dec.row[i] + dec.col[i]) / nm1 - t;
  return out;
}

double select_plm_bandwidth_cv(const PlmSample& sample, const PlmNuisance& nuis, std::span<const double> grid,
                               KernelFamily family) {
  std::vector<double> v;
  std::vector<double> m;
  std::vector<double> r;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (sample.y[i] != 0.0) continue;
    v.push_back(nuis.v_hat[i]);
    m.push_back(nuis.m_hat[i]);
    r.push_back(sample.a[i] - nuis.v_hat[i]);
  }
  if (v.size() < 2) throw Error(Errc::too_few_treated, "bandwidth cross-validation needs at least 2 units with y = 0");
  std::vector<double> owned;
  if (grid.empty()) {
    const double n = static_cast<double>(sample.size());
    owned = default_cv_grid(std::pow(n, -0.25) * std::sqrt(robust_scale(nuis.v_hat) * robust_scale(nuis.m_hat)));
    grid = owned;
  }
  return select_bandwidth_loo(v, m, r, grid, family);
}

PlmReport solve_theta(const PlmSample& sample, const PlmNuisance& nuis, const PlmOptions& options) {
  validate_plm(sample, nuis);
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw Error(Errc::invalid_input, "alpha must lie in (0, 1)");
  PlmReport report;
  report.alpha = options.alpha;
  const std::size_t n = sample.size();

  double h = 1.0;
  if (options.corrected) {
    switch (options.bandwidth) {
      case BandwidthRule::fixed:
        h = options.h;
        report.bandwidth_source = "fixed";
        break;
      case BandwidthRule::rate:
        h = std::pow(static_cast<double>(n), -0.25) * std::sqrt(robust_scale(nuis.v_hat) * robust_scale(nuis.m_hat));
        report.bandwidth_source = "rate";
        break;
      case BandwidthRule::cross_validation:
        h = select_plm_bandwidth_cv(sample, nuis, options.cv_grid, options.family);
        report.bandwidth_source = "cv";
        break;
    }
    report.h_used = h;
  } else {
    report.bandwidth_source = "none";
  }
  const PlmMoment moment(sample, nuis, make_kernel(options.family, h), options.correction, options.corrected);
  if (options.corrected) {
    report.min_qhat = moment.min_q();
    report.clamp_count = moment.floored();
  }
  if (moment.theta_free()) {
    throw Error(Errc::degenerate_moment, "the moment does not depend on theta (no y = 1 unit with a nonzero weight)");
  }

  constexpr double kDefaultHalfWidth = 5.0;
  constexpr double kMaxHalfWidth = 50.0;
  double lo = options.bracket ? options.bracket->first : -kDefaultHalfWidth;
  double hi = options.bracket ? options.bracket->second : kDefaultHalfWidth;
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
    throw Error(Errc::invalid_input, "bracket must be finite with lo < hi");
  }
  double f_lo = moment(lo);
  double f_hi = moment(hi);
  while (f_lo * f_hi > 0.0 && !options.bracket && (lo > -kMaxHalfWidth || hi < kMaxHalfWidth)) {
    lo = std::max(2.0 * lo, -kMaxHalfWidth);
    hi = std::min(2.0 * hi, kMaxHalfWidth);
    f_lo = moment(lo);
    f_hi = moment(hi);
  }
  if (!(std::isfinite(f_lo) && std::isfinite(f_hi)) || f_lo * f_hi > 0.0) {
    throw Error(Errc::no_sign_change, "the moment has the same sign at theta = " + std::to_string(lo) + " and " +
                                          std::to_string(hi));
  }
  report.bracket_lo = lo;
  report.bracket_hi = hi;

  double theta = 0.0;
  if (f_lo == 0.0) {
    theta = lo;
  } else if (f_hi == 0.0) {
    theta = hi;
  } else {
    std::uintmax_t iterations = 200;
    const auto [a, b] = boost::math::tools::toms748_solve([&](double t) { return moment(t); }, lo, hi, f_lo, f_hi,
                                                          boost::math::tools::eps_tolerance<double>(), iterations);
    report.iterations = static_cast<std::size_t>(iterations);
    theta = std::abs(moment(a)) <= std::abs(moment(b)) ? a : b;
  }
  report.theta_hat = theta;
  report.moment_at_root = moment(theta);
  report.correction = moment.correction(theta);

  const double step = options.derivative_step * std::max(1.0, std::abs(theta));
  report.derivative = (moment(theta + step) - moment(theta - step)) / (2.0 * step);
  if (!(std::abs(report.derivative) > 0.0) || !std::isfinite(report.derivative)) {
    throw Error(Errc::degenerate_moment, "the moment is flat at the root");
  }
  const auto contrib = moment.contributions(theta);
  report.se = sample_sd(contrib) / (std::sqrt(static_cast<double>(n)) * std::abs(report.derivative));
  std::tie(report.ci_lo, report.ci_hi) = wald_interval(report.theta_hat, report.se, options.alpha);
  return report;
}

PlmNuisance crossfit_plm_nuisances(const PlmSample& sample, const FoldAssignment& folds) {
  const std::size_t n = sample.size();
  if (sample.a.size() != n || static_cast<std::size_t>(sample.x.rows()) != n) {
    throw Error(Errc::mismatched_length, "y, a and x must have the same number of rows");
  }
  if (folds.fold_of.size() != n) throw Error(Errc::mismatched_length, "fold assignment does not match the sample");
  if (folds.k < 2) throw Error(Errc::k_out_of_range, "cross-fitting needs at least 2 folds");
  const bool binary_a = sample.binary_treatment();
  PlmNuisance out;
  out.v_hat.resize(n);
  out.m_hat.resize(n);
  std::vector<double> buffer;
  for (int f = 0; f < folds.k; ++f) {
    std::vector<std::size_t> untreated_y;  // training rows with y = 0
    std::vector<std::size_t> control_a;    // training rows with a = 0
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < n; ++i) {
      if (folds.fold_of[i] == f) continue;
      train.push_back(i);
      if (sample.y[i] == 0.0) untreated_y.push_back(i);
      if (sample.a[i] == 0.0) control_a.push_back(i);
    }
    if (untreated_y.empty()) throw Error(Errc::one_class, "no y = 0 unit outside fold " + std::to_string(f));

    const Eigen::MatrixXd xv = select_rows(sample.x, untreated_y);
    const auto av = select(sample.a, untreated_y);
    LogisticModel v_logistic;
    LinearModel v_linear;
    if (binary_a) {
      v_logistic = fit_logistic(xv, av);
    } else {
      v_linear = fit_least_squares(xv, av);
    }

    LogisticModel m_model;
    bool joint = false;
    if (binary_a) {
      if (control_a.empty()) throw Error(Errc::one_class, "no a = 0 unit outside fold " + std::to_string(f));
      m_model = fit_logistic(select_rows(sample.x, control_a), select(sample.y, control_a));
    } else {
      Eigen::MatrixXd design(static_cast<Eigen::Index>(train.size()), sample.x.cols() + 1);
      design.col(0) = Eigen::Map<const Eigen::VectorXd>(select(sample.a, train).data(),
                                                        static_cast<Eigen::Index>(train.size()));
      design.rightCols(sample.x.cols()) = select_rows(sample.x, train);
      m_model = fit_logistic(design, select(sample.y, train));
      joint = true;
    }

    for (std::size_t i = 0; i < n; ++i) {
      if (folds.fold_of[i] != f) continue;
      const auto xi = row_span(sample.x, i, buffer);
      out.v_hat[i] = binary_a ? v_logistic.predict(xi) : v_linear.predict(xi);
      if (joint) {
        // Drop the treatment coefficient; keep intercept and X terms.
        double eta = m_model.beta(0);
        for (std::size_t c = 0; c < xi.size(); ++c) eta += m_model.beta(static_cast<Eigen::Index>(c) + 2) * xi[c];
        out.m_hat[i] = eta;
      } else {
        out.m_hat[i] = m_model.linear_predictor(xi);
      }
    }
  }
  return out;
}

double PlmDgp::propensity(double x) const { return expit(a_slope * x); }

double PlmDgp::m0(double x) const { return m_intercept + m_slope * x; }

double PlmDgp::v0(double x) const {
  const double p = propensity(x);
  const double y0_treated = 1.0 - expit(theta + m0(x));
  const double y0_control = 1.0 - expit(m0(x));
  return p * y0_treated / (p * y0_treated + (1.0 - p) * y0_control);
}

PlmSimulated generate_plm(const PlmDgp& dgp, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> cov(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PlmSimulated out;
  out.sample.y.resize(n);
  out.sample.a.resize(n);
  out.sample.x.resize(static_cast<Eigen::Index>(n), 1);
  out.truth.v_hat.resize(n);
  out.truth.m_hat.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = cov(rng);
    const double a = unit(rng) < dgp.propensity(x) ? 1.0 : 0.0;
    const double y = unit(rng) < expit(dgp.theta * a + dgp.m0(x)) ? 1.0 : 0.0;
    out.sample.x(static_cast<Eigen::Index>(i), 0) = x;
    out.sample.a[i] = a;
    out.sample.y[i] = y;
    out.truth.v_hat[i] = dgp.v0(x);
    out.truth.m_hat[i] = dgp.m0(x);
  }
  return out;
}

}  // namespace drustat
