#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "drustat/plm.hpp"
#include "test_support.hpp"

using namespace drustat;

namespace {

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

double naive_empirical(const testing::PlmInstance& in, double theta) {
  const auto& s = in.sample;
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    total += (s.a[i] - in.nuis.v_hat[i]) *
             (s.y[i] * std::exp(-theta * s.a[i] - in.nuis.m_hat[i]) - (1.0 - s.y[i]));
  }
  return total / static_cast<double>(s.size());
}

testing::PlmInstance four_units() {
  testing::PlmInstance in;
  in.family = KernelFamily::box;
  in.h = 0.6;
  in.sample.y = {1.0, 0.0, 0.0, 1.0};
  in.sample.a = {1.0, 0.0, 1.0, 0.5};
  in.sample.x = Eigen::MatrixXd::Zero(4, 0);
  in.nuis.v_hat = {0.4, 0.3, 0.6, 0.5};
  in.nuis.m_hat = {-0.2, 0.1, 0.3, -0.1};
  return in;
}

PlmOptions fixed_h(double h) {
  PlmOptions options;
  options.bandwidth = BandwidthRule::fixed;
  options.h = h;
  return options;
}

}  // namespace

TEST_CASE("four-unit moment matches the naive sums") {
  const auto in = four_units();
  const PlmMoment moment(in.sample, in.nuis, make_kernel(in.family, in.h));
  for (double theta : {-1.0, 0.0, 0.7, 2.5}) {
    const double t = testing::naive_plm_t(in, theta);
    CHECK(t != 0.0);
    CHECK(testing::relative_difference(moment.correction(theta), t) <= 1e-12);
    CHECK(testing::relative_difference(moment(theta), naive_empirical(in, theta) - t) <= 1e-12);
  }
}

TEST_CASE("all-zero outcomes give a theta-free moment") {
  std::mt19937_64 rng(2);
  auto in = testing::random_plm_instance(rng, 60);
  for (auto& y : in.sample.y) y = 0.0;
  const PlmMoment moment(in.sample, in.nuis, make_kernel(in.family, in.h));
  CHECK(moment.theta_free());
  double mean_resid = 0.0;
  for (std::size_t i = 0; i < 60; ++i) mean_resid += (in.sample.a[i] - in.nuis.v_hat[i]) / 60.0;
  const double expected = -mean_resid - testing::naive_plm_t(in, 0.0);
  for (double theta : {-3.0, 0.0, 4.0}) {
    CHECK(moment(theta) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(moment.correction(theta) == moment.correction(0.0));
  }
  CHECK(error_code([&] { solve_theta(in.sample, in.nuis, fixed_h(in.h)); }) == Errc::degenerate_moment);
}

TEST_CASE("vanishing residuals are degenerate") {
  std::mt19937_64 rng(3);
  auto in = testing::random_plm_instance(rng, 40);
  in.nuis.v_hat = in.sample.a;
  const PlmMoment moment(in.sample, in.nuis, make_kernel(in.family, in.h));
  CHECK(moment.theta_free());
  for (double theta : {-1.0, 1.0}) CHECK(moment(theta) == 0.0);
  CHECK(error_code([&] { solve_theta(in.sample, in.nuis, fixed_h(in.h)); }) == Errc::degenerate_moment);
}

TEST_CASE("closed-form derivative matches finite differences") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    const auto in = testing::random_plm_instance(rng, 80);
    for (bool corrected : {false, true}) {
      const PlmMoment moment(in.sample, in.nuis, make_kernel(in.family, in.h), {}, corrected);
      for (double theta : {-0.5, 0.3, 1.2}) {
        const double step = 1e-5;
        const double fd = (moment(theta + step) - moment(theta - step)) / (2.0 * step);
        CHECK(testing::relative_difference(moment.derivative(theta), fd) <= 1e-6);
        if (!corrected) {
          double closed = 0.0;
          for (std::size_t i = 0; i < 80; ++i) {
            const auto& s = in.sample;
            closed -= s.a[i] * (s.a[i] - in.nuis.v_hat[i]) * s.y[i] * std::exp(-theta * s.a[i] - in.nuis.m_hat[i]);
          }
          CHECK(testing::relative_difference(moment.derivative(theta), closed / 80.0) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("fast moment equals the naive oracle") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 3; ++rep) {
    const auto in = testing::random_plm_instance(rng, 600);
    const auto spec = make_kernel(in.family, in.h);
    const PlmMoment fast(in.sample, in.nuis, spec, {kDefaultQFloor, SumPath::fast});
    const PlmMoment naive(in.sample, in.nuis, spec, {kDefaultQFloor, SumPath::naive});
    CHECK(fast.fast_path());
    CHECK_FALSE(naive.fast_path());
    for (double theta : {-0.8, 0.9}) {
      CHECK(testing::relative_difference(fast.correction(theta), testing::naive_plm_t(in, theta)) <= 1e-10);
      CHECK(testing::relative_difference(fast.correction(theta), naive.correction(theta)) <= 1e-10);
    }
  }
}

TEST_CASE("contributions average to the moment") {
  std::mt19937_64 rng(6);
  for (std::size_t n : {50, 600}) {
    const auto in = testing::random_plm_instance(rng, n);
    const PlmMoment moment(in.sample, in.nuis, make_kernel(in.family, in.h));
    for (double theta : {-1.0, 0.5}) {
      const auto c = moment.contributions(theta);
      double mean = 0.0;
      for (double v : c) mean += v;
      mean /= static_cast<double>(n);
      CHECK(std::abs(mean - moment(theta)) <= 1e-12);
    }
  }
}

TEST_CASE("no sign change on the bracket") {
  // Every y = 1 unit pushes the moment up and y = 0 units carry no residual.
  PlmSample sample;
  PlmNuisance nuis;
  for (int i = 0; i < 20; ++i) {
    const bool outcome = i % 2 == 0;
    sample.y.push_back(outcome ? 1.0 : 0.0);
    sample.a.push_back(outcome ? 1.0 : 0.4);
    nuis.v_hat.push_back(0.4);
    nuis.m_hat.push_back(0.05 * i);
  }
  sample.x = Eigen::MatrixXd::Zero(20, 0);
  CHECK(error_code([&] { solve_theta(sample, nuis, fixed_h(2.0)); }) == Errc::no_sign_change);
  auto options = fixed_h(2.0);
  options.bracket = std::pair{-1.0, 1.0};
  CHECK(error_code([&] { solve_theta(sample, nuis, options); }) == Errc::no_sign_change);
  options.bracket = std::pair{1.0, -1.0};
  CHECK(error_code([&] { solve_theta(sample, nuis, options); }) == Errc::invalid_input);
}

TEST_CASE("validation errors") {
  std::mt19937_64 rng(7);
  auto in = testing::random_plm_instance(rng, 10);
  auto bad_y = in;
  bad_y.sample.y[3] = 0.5;
  CHECK(error_code([&] { validate_plm(bad_y.sample, bad_y.nuis); }) == Errc::invalid_input);
  auto short_v = in;
  short_v.nuis.v_hat.pop_back();
  CHECK(error_code([&] { validate_plm(short_v.sample, short_v.nuis); }) == Errc::mismatched_length);
  auto nan_m = in;
  nan_m.nuis.m_hat[2] = NAN;
  try {
    validate_plm(nan_m.sample, nan_m.nuis);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::nonfinite_value);
    CHECK(e.row() == std::optional<std::size_t>(2));
  }
  CHECK(error_code([&] { crossfit_plm_nuisances(in.sample, FoldAssignment{std::vector<int>(10, 0), 1}); }) ==
        Errc::k_out_of_range);
}

TEST_CASE("recovery with true nuisances") {
  const PlmDgp dgp;
  std::mt19937_64 rng(2024);
  const auto sim = generate_plm(dgp, 5000, rng);
  const auto corrected = solve_theta(sim.sample, sim.truth);
  CHECK(std::abs(corrected.moment_at_root) <= 1e-10);
  CHECK(corrected.se > 0.0);
  CHECK(std::abs(corrected.theta_hat - 1.0) <= 4.0 * corrected.se);
  CHECK(corrected.ci_lo < corrected.theta_hat);
  CHECK(corrected.theta_hat < corrected.ci_hi);
  CHECK(corrected.bandwidth_source == "cv");

  PlmOptions plain;
  plain.corrected = false;
  const auto uncorrected = solve_theta(sim.sample, sim.truth, plain);
  CHECK(uncorrected.correction == 0.0);
  CHECK(std::abs(uncorrected.theta_hat - 1.0) <= 4.0 * uncorrected.se);
  CHECK(std::abs(corrected.theta_hat - uncorrected.theta_hat) <= corrected.se);
}

TEST_CASE("population nuisances of the test design") {
  const PlmDgp dgp;
  for (double x : {-0.9, 0.0, 0.6}) {
    const double p = dgp.propensity(x);
    CHECK(p == doctest::Approx(1.0 / (1.0 + std::exp(-0.5 * x))));
    const double s1 = 1.0 - 1.0 / (1.0 + std::exp(-(1.0 + dgp.m0(x))));
    const double s0 = 1.0 - 1.0 / (1.0 + std::exp(-dgp.m0(x)));
    CHECK(dgp.v0(x) == doctest::Approx(p * s1 / (p * s1 + (1.0 - p) * s0)));
  }
}

TEST_CASE("cross-fitted nuisances") {
  const PlmDgp dgp;
  std::mt19937_64 rng(99);
  const auto sim = generate_plm(dgp, 4000, rng);
  const auto nuis = crossfit_plm_nuisances(sim.sample, make_folds(4000, 2, 3));
  double v_err = 0.0;
  double m_err = 0.0;
  for (std::size_t i = 0; i < 4000; ++i) {
    v_err = std::max(v_err, std::abs(nuis.v_hat[i] - sim.truth.v_hat[i]));
    m_err = std::max(m_err, std::abs(nuis.m_hat[i] - sim.truth.m_hat[i]));
  }
  CHECK(v_err < 0.1);
  CHECK(m_err < 0.5);
  const auto report = solve_theta(sim.sample, nuis);
  CHECK(std::abs(report.theta_hat - 1.0) <= 4.0 * report.se);

  // Real-valued treatment takes the least-squares and joint-logistic learners.
  auto continuous = sim.sample;
  std::normal_distribution<double> noise(0.0, 0.2);
  for (auto& a : continuous.a) a += noise(rng);
  const auto cnuis = crossfit_plm_nuisances(continuous, make_folds(4000, 3, 3));
  for (std::size_t i = 0; i < 4000; ++i) {
    CHECK(std::isfinite(cnuis.v_hat[i]));
    CHECK(std::isfinite(cnuis.m_hat[i]));
  }
}

TEST_CASE("correction shrinks with n under exact nuisances") {
  const PlmDgp dgp;
  const auto mean_abs_t = [&](std::size_t n) {
    double total = 0.0;
    for (std::uint64_t rep = 0; rep < 30; ++rep) {
      std::mt19937_64 rng(1000 + rep);
      const auto sim = generate_plm(dgp, n, rng);
      const double h = std::pow(static_cast<double>(n), -0.25) * 0.5;
      const PlmMoment moment(sim.sample, sim.truth, make_kernel(KernelFamily::box, h));
      total += std::abs(moment.correction(dgp.theta));
    }
    return total / 30.0;
  };
  CHECK(mean_abs_t(4000) < mean_abs_t(500));
}
