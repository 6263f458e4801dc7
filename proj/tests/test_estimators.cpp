#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "drustat/estimators.hpp"
#include "drustat/simulation.hpp"
#include "test_support.hpp"

using namespace drustat;

namespace {

constexpr Method kCorrected[] = {Method::omega, Method::mu, Method::main};

double naive_for(Method method, const testing::Instance& in) {
  switch (method) {
    case Method::omega: return testing::naive_t_omega(in);
    case Method::mu: return testing::naive_t_mu(in);
    default: return testing::naive_t_main(in);
  }
}

double correction_for(Method method, const testing::Instance& in, SumPath path = SumPath::automatic) {
  const auto spec = make_kernel(in.family, in.h);
  const CorrectionOptions options{kDefaultQFloor, path};
  switch (method) {
    case Method::omega: return correction_omega(in.data, in.nuis, spec, options);
    case Method::mu: return correction_mu(in.data, in.nuis, spec, options);
    default: return correction_main(in.data, in.nuis, spec, options);
  }
}

// n = 4 with two pairs inside the window so every normalizer is positive.
testing::Instance four_units() {
  std::vector<Observation> obs{{1.0, 1, {}}, {0.0, 1, {}}, {1.0, 0, {}}, {1.0, 1, {}}};
  NuisanceValues nuis{{1.2, 1.5, 2.0, 1.4}, {0.6, 0.4, 0.7, 0.5}};
  return {Dataset(std::move(obs)), std::move(nuis), KernelFamily::box, 0.5};
}

}  // namespace

TEST_CASE("aipw arithmetic") {
  const Dataset two({{1.0, 1, {}}, {0.0, 0, {}}});
  CHECK(aipw(two, {{2.0, 3.0}, {0.5, 0.5}}) == 1.0);

  std::mt19937_64 rng(1);
  auto in = testing::random_instance(rng, 40);
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    if (in.data[i].a == 1) in.nuis.mu_hat[i] = in.data[i].y;
  }
  const double mean_mu = std::accumulate(in.nuis.mu_hat.begin(), in.nuis.mu_hat.end(), 0.0) / 40.0;
  CHECK(aipw(in.data, in.nuis) == doctest::Approx(mean_mu).epsilon(1e-14));

  std::vector<Observation> treated(in.data.observations());
  for (auto& o : treated) o.a = 1;
  const Dataset all_treated(std::move(treated));
  NuisanceValues unit{std::vector<double>(40, 1.0), in.nuis.mu_hat};
  double mean_y = 0.0;
  for (const auto& o : all_treated.observations()) mean_y += o.y / 40.0;
  CHECK(aipw(all_treated, unit) == doctest::Approx(mean_y).epsilon(1e-14));
}

TEST_CASE("corrections on a four-unit instance match the naive sums") {
  const auto in = four_units();
  for (auto method : kCorrected) {
    const double naive = naive_for(method, in);
    CHECK(naive != 0.0);
    CHECK(testing::relative_difference(correction_for(method, in), naive) <= 1e-12);
  }
}

TEST_CASE("corrections vanish exactly") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    auto in = testing::random_instance(rng, rep < 5 ? 60 : 700, false, rep % 2 == 0);
    in.family = KernelFamily::box;
    auto residual_free = in;
    for (std::size_t i = 0; i < in.data.size(); ++i) {
      if (in.data[i].a == 1) residual_free.nuis.mu_hat[i] = in.data[i].y;
    }
    std::vector<Observation> treated(in.data.observations());
    for (auto& o : treated) o.a = 1;
    testing::Instance unit{Dataset(std::move(treated)), in.nuis, KernelFamily::box, in.h};
    unit.nuis.omega_hat.assign(in.data.size(), 1.0);
    for (auto method : kCorrected) {
      CHECK(correction_for(method, residual_free) == 0.0);
      CHECK(correction_for(method, unit) == 0.0);
    }
  }
}

TEST_CASE("fast corrections equal forced naive evaluation") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 4; ++rep) {
    const auto in = testing::random_instance(rng, 600, rep % 2 == 1, rep < 2);
    for (auto method : kCorrected) {
      CHECK(testing::relative_difference(correction_for(method, in, SumPath::fast),
                                         correction_for(method, in, SumPath::naive)) <= 1e-10);
    }
  }
}

TEST_CASE("influence values average to the estimate") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 8; ++rep) {
    const auto in = testing::random_instance(rng, rep % 2 == 0 ? 50 : 600, rep % 4 == 1);
    const auto spec = make_kernel(in.family, in.h);
    const auto phi = aipw_contributions(in.data, in.nuis);
    const auto aipw_zeta = influence_values(Method::aipw, in.data, in.nuis, spec);
    CHECK(aipw_zeta.zeta == phi);
    const double dr = aipw(in.data, in.nuis);
    for (auto method : kCorrected) {
      const auto zeta = influence_values(method, in.data, in.nuis, spec);
      const double t = correction_for(method, in);
      CHECK(std::abs(zeta.mean() - (dr - t)) <= 1e-12);
    }
  }
}

TEST_CASE("influence values reduce to aipw terms without residuals") {
  std::mt19937_64 rng(10);
  auto in = testing::random_instance(rng, 30);
  for (std::size_t i = 0; i < in.data.size(); ++i) in.nuis.mu_hat[i] = in.data[i].y;
  const auto spec = make_kernel(in.family, in.h);
  const auto phi = aipw_contributions(in.data, in.nuis);
  for (auto method : kCorrected) {
    const auto zeta = influence_values(method, in.data, in.nuis, spec).zeta;
    for (std::size_t i = 0; i < phi.size(); ++i) CHECK(zeta[i] == doctest::Approx(phi[i]).epsilon(1e-14));
  }
}

TEST_CASE("estimates are permutation invariant") {
  std::mt19937_64 rng(14);
  const auto in = testing::random_instance(rng, 80);
  std::vector<std::size_t> perm(80);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Observation> obs;
  NuisanceValues nuis;
  for (auto p : perm) {
    obs.push_back(in.data[p]);
    nuis.omega_hat.push_back(in.nuis.omega_hat[p]);
    nuis.mu_hat.push_back(in.nuis.mu_hat[p]);
  }
  const testing::Instance shuffled{Dataset(std::move(obs)), nuis, in.family, in.h};
  for (auto method : kCorrected) {
    CHECK(testing::relative_difference(correction_for(method, in), correction_for(method, shuffled)) <= 1e-12);
  }
  CHECK(aipw(in.data, in.nuis) == doctest::Approx(aipw(shuffled.data, shuffled.nuis)).epsilon(1e-14));
}

TEST_CASE("all normalizers zero is an error") {
  const Dataset data({{1.0, 1, {}}, {0.0, 1, {}}, {1.0, 1, {}}});
  const NuisanceValues nuis{{1.0, 2.0, 3.0}, {0.1, 0.5, 0.9}};
  const auto spec = make_kernel(KernelFamily::box, 0.01);
  // The leave-i-out normalizer keeps its center term, so it stays positive.
  CHECK(correction_mu(data, nuis, spec) == 0.0);
  for (auto method : {Method::omega, Method::main}) {
    try {
      correction_terms(method, data, nuis, spec);
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::all_qhat_zero);
    }
  }
}

TEST_CASE("normalizer floor is applied and counted") {
  const auto in = four_units();
  const auto spec = make_kernel(in.family, in.h);
  const auto terms = correction_terms(Method::omega, in.data, in.nuis, spec, {10.0, SumPath::naive});
  CHECK(terms.floored == 4);
  CHECK(testing::relative_difference(terms.total / 12.0, testing::naive_t_omega(in, 10.0)) <= 1e-12);
}

TEST_CASE("degenerate estimate has zero standard error") {
  const double c = 0.4;
  std::vector<Observation> obs;
  for (int i = 0; i < 10; ++i) obs.push_back({c, i % 3 == 0 ? 0 : 1, {}});
  const Dataset data(std::move(obs));
  NuisanceValues nuis{std::vector<double>(10, 1.5), std::vector<double>(10, c)};
  for (std::size_t i = 0; i < 10; ++i) nuis.omega_hat[i] = 1.0 + 0.1 * static_cast<double>(i);
  EstimateOptions options;
  options.bandwidth = BandwidthRule::fixed;
  options.h = 0.3;
  const auto report = estimate(Method::main, data, nuis, options);
  CHECK(report.psi_hat == doctest::Approx(c).epsilon(1e-15));
  CHECK(report.se == 0.0);
  CHECK(report.ci_lo == report.ci_hi);
}

TEST_CASE("Wald interval arithmetic") {
  const auto [lo, hi] = wald_interval(0.66, 0.01, 0.05);
  CHECK(std::abs(lo - 0.6404) < 1e-4);
  CHECK(std::abs(hi - 0.6796) < 1e-4);
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
}

TEST_CASE("estimate report invariants and alpha check") {
  std::mt19937_64 rng(16);
  const auto in = testing::random_instance(rng, 200);
  for (auto method : {Method::aipw, Method::omega, Method::mu, Method::main}) {
    EstimateOptions options;
    options.alpha = 0.1;
    const auto report = estimate(method, in.data, in.nuis, options);
    CHECK(report.ci_lo <= report.psi_hat);
    CHECK(report.psi_hat <= report.ci_hi);
    CHECK(report.ci_hi - report.ci_lo == doctest::Approx(2.0 * normal_quantile(0.95) * report.se).epsilon(1e-12));
    CHECK(report.psi_dr == doctest::Approx(aipw(in.data, in.nuis)).epsilon(1e-14));
    if (method == Method::aipw) {
      CHECK_FALSE(report.h_used.has_value());
    } else {
      CHECK(report.bandwidth_source == "cv");
      CHECK(report.psi_hat == doctest::Approx(report.psi_dr - report.correction).epsilon(1e-14));
    }
  }
  EstimateOptions bad;
  bad.alpha = 1.0;
  CHECK_THROWS_AS(estimate(Method::aipw, in.data, in.nuis, bad), Error);
}

TEST_CASE("single draw from the simulation design lands near the truth") {
  const DgpSpec dgp;
  auto rng = stream_rng(2024, 2000, 0);
  const auto sample = generate_dataset(dgp, 2000, rng);
  const auto nuis = perturbed_nuisance(dgp, 2000, 0.3, 0.3, rng).evaluate(sample.data);
  const auto report = estimate(Method::main, sample.data, nuis);
  CHECK(report.se > 0.0);
  CHECK(std::abs(report.psi_hat - 0.66) <= 4.0 * report.se);
}

TEST_CASE("rate bandwidths") {
  NuisanceValues nuis{{1.0, 2.0, 3.0, 4.0, 5.0}, {0.1, 0.2, 0.3, 0.4, 0.5}};
  // Type 7 quartiles: IQR(omega) = 2, IQR(mu) = 0.2.
  CHECK(rate_bandwidth(Method::omega, nuis) == doctest::Approx(2.0 / std::sqrt(5.0)));
  CHECK(rate_bandwidth(Method::mu, nuis) == doctest::Approx(0.2 / std::sqrt(5.0)));
  CHECK(rate_bandwidth(Method::main, nuis) == doctest::Approx(std::sqrt(0.4) * std::pow(5.0, -0.25)));
  const auto grid = default_cv_grid(1.0);
  REQUIRE(grid.size() == 16);
  CHECK(grid.front() == doctest::Approx(0.1));
  CHECK(grid.back() == doctest::Approx(2.0));
  CHECK(robust_scale(std::vector<double>{3.0, 3.0, 3.0}) == 1.0);
}

TEST_CASE("bandwidth selection") {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> unit;
  SUBCASE("constant residuals tie and the smallest h wins") {
    std::vector<Observation> obs;
    NuisanceValues nuis;
    for (int i = 0; i < 30; ++i) {
      obs.push_back({0.75, 1, {}});
      nuis.omega_hat.push_back(1.0 + 3.0 * unit(rng));
      nuis.mu_hat.push_back(0.5);
    }
    const Dataset data(std::move(obs));
    const std::vector<double> grid{0.5, 0.1, 0.3};
    CHECK(select_bandwidth_cv(data, nuis, grid) == 0.1);
    CHECK(select_bandwidth_cv(data, nuis, std::vector<double>{0.7}) == 0.7);
  }
  SUBCASE("two clusters favour the small bandwidth") {
    std::vector<double> c1;
    std::vector<double> c2;
    std::vector<double> r;
    for (int i = 0; i < 20; ++i) {
      const bool second = i >= 10;
      c1.push_back((second ? 3.0 : 1.0) + 0.1 * unit(rng));
      c2.push_back((second ? 0.8 : 0.2) + 0.05 * unit(rng));
      r.push_back(second ? 1.0 : -1.0);
    }
    const std::vector<double> grid{0.3, 5.0};
    // LOO error by hand: clusters are homogeneous, so h = 0.3 predicts exactly.
    double wide = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t j = 0; j < 20; ++j) {
        if (j == i) continue;
        const double k = testing::scaled_kernel(KernelFamily::box, 5.0, c1[j] - c1[i]) *
                         testing::scaled_kernel(KernelFamily::box, 5.0, c2[j] - c2[i]);
        num += k * r[j];
        den += k;
      }
      wide += std::pow(r[i] - num / den, 2) / 20.0;
    }
    CHECK(wide > 0.0);
    CHECK(select_bandwidth_loo(c1, c2, r, grid) == 0.3);

    std::vector<Observation> obs;
    NuisanceValues nuis;
    for (std::size_t i = 0; i < 20; ++i) {
      obs.push_back({c2[i] + r[i] * 0.1, 1, {}});
      nuis.omega_hat.push_back(c1[i]);
      nuis.mu_hat.push_back(c2[i]);
    }
    CHECK(select_bandwidth_cv(Dataset(std::move(obs)), nuis, grid) == 0.3);
  }
  SUBCASE("too few treated units") {
    const Dataset data({{1.0, 1, {}}, {0.0, 0, {}}, {1.0, 0, {}}});
    try {
      select_bandwidth_cv(data, {{1.0, 2.0, 3.0}, {0.5, 0.5, 0.5}});
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::too_few_treated);
    }
  }
}
