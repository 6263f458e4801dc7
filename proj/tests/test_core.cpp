#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "drustat/core.hpp"

using namespace drustat;

namespace {

Dataset two_units() {
  return Dataset({{1.0, 1, {0.1}}, {0.0, 0, {0.4}}});
}

template <class F>
Errc error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a drustat::Error");
  return Errc::io_error;
}

}  // namespace

TEST_CASE("validate accepts a two-unit sample") {
  const auto v = validate(two_units(), {{1.5, 2.0}, {0.3, 0.6}});
  CHECK(v.data.size() == 2);
  CHECK(v.nuisance.omega_hat[1] == 2.0);
}

TEST_CASE("validate rejects omega_hat below one with the row") {
  try {
    validate(two_units(), {{0.9, 2.0}, {0.3, 0.6}});
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::omega_below_one);
    REQUIRE(e.row().has_value());
    CHECK(*e.row() == 0);
  }
}

TEST_CASE("validate structural errors") {
  CHECK(error_code([] { validate(Dataset({{1.0, 0, {0.1}}, {0.0, 0, {0.4}}}), {{1.5, 2.0}, {0.3, 0.6}}); }) ==
        Errc::no_treated);
  CHECK(error_code([] { validate(two_units(), {{1.5}, {0.3, 0.6}}); }) == Errc::mismatched_length);
  CHECK(error_code([] { validate(two_units(), {{1.5, NAN}, {0.3, 0.6}}); }) == Errc::nonfinite_value);
  CHECK(error_code([] { validate(two_units(), {{1.5, 200.0}, {0.3, 0.6}}); }) == Errc::out_of_bounds);
  CHECK(error_code([] { Dataset({{1.0, 1, {0.1}}}); }) == Errc::invalid_input);
  CHECK(error_code([] { Dataset({{1.0, 1, {0.1}}, {0.0, 0, {0.4, 0.2}}}); }) == Errc::mismatched_length);
  CHECK(error_code([] { Dataset({{1.0, 2, {0.1}}, {0.0, 0, {0.4}}}); }) == Errc::invalid_input);
  CHECK(error_code([] { Dataset({{INFINITY, 1, {0.1}}, {0.0, 0, {0.4}}}); }) == Errc::nonfinite_value);
  CHECK(error_code([] { Dataset({{1000.0, 1, {0.1}}, {0.0, 0, {0.4}}}); }) == Errc::out_of_bounds);
}

TEST_CASE("folds are balanced, deterministic and seed dependent") {
  const auto f4 = make_folds(4, 2, 11);
  CHECK(f4.fold_size(0) == 2);
  CHECK(f4.fold_size(1) == 2);
  const auto f5 = make_folds(5, 2, 11);
  CHECK(f5.fold_size(0) == 3);
  CHECK(f5.fold_size(1) == 2);
  CHECK(make_folds(100, 5, 3).fold_of == make_folds(100, 5, 3).fold_of);
  CHECK(make_folds(100, 5, 3).fold_of != make_folds(100, 5, 4).fold_of);
  for (int f = 0; f < 7; ++f) {
    const auto size = make_folds(103, 7, 9).fold_size(f);
    CHECK((size == 14 || size == 15));
  }
  CHECK(error_code([] { make_folds(5, 1, 0); }) == Errc::k_out_of_range);
  CHECK(error_code([] { make_folds(5, 6, 0); }) == Errc::k_out_of_range);
}

TEST_CASE("logistic fit errors") {
  Eigen::MatrixXd x(3, 1);
  x << 0.0, 1.0, 2.0;
  CHECK(error_code([&] { fit_logistic(x, std::vector<double>{1, 1, 1}); }) == Errc::one_class);
  CHECK(error_code([&] { fit_logistic(x, std::vector<double>{0, 0, 1}); }) == Errc::separation_or_singular);
  CHECK(error_code([&] { fit_logistic(x, std::vector<double>{0, 2, 1}); }) == Errc::invalid_input);
}

TEST_CASE("constant covariate gives the logit of the mean") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(10, 1, 3.0);
  const std::vector<double> y{1, 0, 0, 1, 0, 0, 0, 1, 0, 0};
  const auto model = fit_logistic(x, y);
  CHECK(model.beta(0) == doctest::Approx(std::log(0.3 / 0.7)).epsilon(1e-10));
  CHECK(model.beta(1) == 0.0);
}

TEST_CASE("logistic score vanishes at the returned coefficients") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  const Eigen::Index n = 400;
  Eigen::MatrixXd x(n, 2);
  std::vector<double> y(static_cast<std::size_t>(n));
  std::vector<double> w(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = normal(rng);
    x(i, 1) = normal(rng);
    y[static_cast<std::size_t>(i)] = unit(rng) < expit(0.3 + x(i, 0) - 0.5 * x(i, 1)) ? 1.0 : 0.0;
    w[static_cast<std::size_t>(i)] = 0.5 + unit(rng);
  }
  const auto model = fit_logistic(x, y, w);
  double total_weight = 0.0;
  double g[3] = {0.0, 0.0, 0.0};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    const double p = 1.0 / (1.0 + std::exp(-(model.beta(0) + model.beta(1) * x(i, 0) + model.beta(2) * x(i, 1))));
    const double r = w[s] * (y[s] - p);
    g[0] += r;
    g[1] += r * x(i, 0);
    g[2] += r * x(i, 1);
    total_weight += w[s];
  }
  for (double gk : g) CHECK(std::abs(gk / total_weight) <= 1e-8);
}

TEST_CASE("logistic recovers known coefficients at n = 100000") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  const Eigen::Index n = 100000;
  Eigen::MatrixXd x(n, 2);
  std::vector<double> y(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = normal(rng);
    x(i, 1) = normal(rng);
    y[static_cast<std::size_t>(i)] = unit(rng) < expit(-0.5 + 1.0 * x(i, 0) - 0.7 * x(i, 1)) ? 1.0 : 0.0;
  }
  const auto model = fit_logistic(x, y);
  CHECK(std::abs(model.beta(0) + 0.5) < 0.05);
  CHECK(std::abs(model.beta(1) - 1.0) < 0.05);
  CHECK(std::abs(model.beta(2) + 0.7) < 0.05);
}

TEST_CASE("least squares fits an exact line") {
  Eigen::MatrixXd x(4, 2);
  x << 0, 5, 1, 5, 2, 5, 3, 5;
  const std::vector<double> y{1.0, 3.0, 5.0, 7.0};
  const auto model = fit_least_squares(x, y);
  CHECK(model.beta(0) == doctest::Approx(1.0));
  CHECK(model.beta(1) == doctest::Approx(2.0));
  CHECK(model.beta(2) == 0.0);
}

namespace {

Dataset logistic_sample(std::size_t n, std::uint64_t seed, bool binary = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit;
  std::vector<Observation> obs(n);
  for (auto& o : obs) {
    o.x = {unit(rng), unit(rng)};
    o.a = unit(rng) < expit(-0.2 + o.x[0]) ? 1 : 0;
    const double mu = expit(-1.0 + 2.0 * o.x[1]);
    o.y = binary ? (unit(rng) < mu ? 1.0 : 0.0) : mu + 0.1 * (unit(rng) - 0.5);
  }
  return Dataset(std::move(obs));
}

}  // namespace

TEST_CASE("cross-fitted nuisances never see their own observation") {
  const Dataset data = logistic_sample(300, 2);
  const auto folds = make_folds(data.size(), 3, 8);
  const auto base = crossfit_nuisances(data, folds);

  // Changing labels inside fold 0 leaves fold 0's own predictions untouched.
  auto obs = data.observations();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (folds.fold_of[i] != 0) continue;
    obs[i].y = 1.0 - obs[i].y;
    obs[i].a = 1 - obs[i].a;
  }
  const auto flipped = crossfit_nuisances(Dataset(std::move(obs)), folds);
  std::size_t changed_elsewhere = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (folds.fold_of[i] == 0) {
      CHECK(flipped.values.omega_hat[i] == base.values.omega_hat[i]);
      CHECK(flipped.values.mu_hat[i] == base.values.mu_hat[i]);
    } else if (flipped.values.omega_hat[i] != base.values.omega_hat[i]) {
      ++changed_elsewhere;
    }
  }
  CHECK(changed_elsewhere > 0);
  for (double w : base.values.omega_hat) CHECK(w >= 1.0);
  for (double m : base.values.mu_hat) CHECK((m > 0.0 && m < 1.0));
}

TEST_CASE("cross-fitting matches a direct fit on the other folds") {
  const Dataset data = logistic_sample(200, 4, false);
  const auto folds = make_folds(data.size(), 2, 1);
  const auto result = crossfit_nuisances(data, folds);
  const Eigen::MatrixXd x = data.covariates();
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> treated;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (folds.fold_of[i] == 0) continue;
    train.push_back(static_cast<Eigen::Index>(i));
    if (data[i].a == 1) treated.push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd xt(static_cast<Eigen::Index>(train.size()), 2);
  std::vector<double> at;
  for (std::size_t r = 0; r < train.size(); ++r) {
    xt.row(static_cast<Eigen::Index>(r)) = x.row(train[r]);
    at.push_back(data[static_cast<std::size_t>(train[r])].a);
  }
  // Normal equations for the outcome fit on [1, x] among treated training rows.
  Eigen::MatrixXd design(static_cast<Eigen::Index>(treated.size()), 3);
  Eigen::VectorXd response(static_cast<Eigen::Index>(treated.size()));
  for (std::size_t r = 0; r < treated.size(); ++r) {
    design(static_cast<Eigen::Index>(r), 0) = 1.0;
    design.block(static_cast<Eigen::Index>(r), 1, 1, 2) = x.row(treated[r]);
    response(static_cast<Eigen::Index>(r)) = data[static_cast<std::size_t>(treated[r])].y;
  }
  const Eigen::VectorXd beta = (design.transpose() * design).inverse() * design.transpose() * response;
  const auto propensity = fit_logistic(xt, at);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (folds.fold_of[i] != 0) continue;
    const double mu = beta(0) + beta(1) * data[i].x[0] + beta(2) * data[i].x[1];
    CHECK(result.values.mu_hat[i] == doctest::Approx(mu).epsilon(1e-9));
    CHECK(result.values.omega_hat[i] == doctest::Approx(1.0 / propensity.predict(data[i].x)).epsilon(1e-12));
  }
}

TEST_CASE("propensity clamp bounds omega_hat and counts clamps") {
  const auto clamp = propensity_clamp(Bounds{});
  CHECK(clamp.lower == doctest::Approx(0.01));
  CHECK(clamp.upper == doctest::Approx(1.0 - 1e-6));
  CHECK(propensity_clamp(Bounds{100.0, 5000.0, 100.0}).lower == doctest::Approx(1e-3));

  // A steep propensity pushes fitted probabilities below 1 / omega_max.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit;
  std::vector<Observation> obs(400);
  for (auto& o : obs) {
    o.x = {unit(rng)};
    o.a = unit(rng) < expit(-9.0 + 12.0 * o.x[0]) ? 1 : 0;
    o.y = unit(rng) < 0.5 ? 1.0 : 0.0;
  }
  const Bounds tight{100.0, 10.0, 100.0};
  const Dataset data(std::move(obs), tight);
  const auto result = crossfit_nuisances(data, make_folds(data.size(), 2, 5), tight);
  CHECK(result.propensity_clamps > 0);
  for (double w : result.values.omega_hat) {
    CHECK(w >= 1.0);
    CHECK(w <= 10.0 + 1e-12);
  }
}
