#include "drustat/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "drustat/core.hpp"
#include "drustat/error.hpp"
#include "drustat/estimators.hpp"
#include "drustat/io.hpp"
#include "drustat/lowerbounds.hpp"
#include "drustat/parallel.hpp"
#include "drustat/plm.hpp"
#include "drustat/simulation.hpp"

namespace drustat {
namespace {

using Json = nlohmann::ordered_json;

struct Bandwidth {
  BandwidthRule rule = BandwidthRule::cross_validation;
  double h = 0.0;
};

Bandwidth parse_bandwidth(const std::string& text) {
  if (text == "cv") return {BandwidthRule::cross_validation, 0.0};
  if (text == "rate") return {BandwidthRule::rate, 0.0};
  double h = 0.0;
  std::istringstream in(text);
  if (!(in >> h) || !in.eof() || !(h > 0.0)) {
    throw Error(Errc::invalid_input, "--h must be 'cv', 'rate' or a positive number, got '" + text + "'");
  }
  return {BandwidthRule::fixed, h};
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

void emit(const Json& doc, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << doc.dump(2) << "\n";
    return;
  }
  std::ofstream file(path);
  if (!file) throw Error(Errc::io_error, "cannot write '" + path + "'");
  file << doc.dump(2) << "\n";
}

struct EstimateArgs {
  std::string input;
  std::string out;
  std::string method = "main";
  std::string h = "cv";
  std::string kernel = "box";
  double alpha = 0.05;
  int folds = 5;
  std::uint64_t seed = 1;
};

int cmd_estimate(const EstimateArgs& args, std::ostream& out) {
  const auto method = parse_method(args.method);
  const auto bandwidth = parse_bandwidth(args.h);
  EstimateOptions options;
  options.bandwidth = bandwidth.rule;
  options.h = bandwidth.h;
  options.family = parse_kernel_family(args.kernel);
  options.alpha = args.alpha;

  auto input = parse_estimate_table(read_csv_file(args.input));
  std::string source = "supplied";
  Json crossfit = nullptr;
  NuisanceValues nuis;
  if (input.nuisance) {
    nuis = std::move(*input.nuisance);
  } else {
    const auto folds = make_folds(input.data.size(), args.folds, args.seed);
    auto fitted = crossfit_nuisances(input.data, folds);
    nuis = std::move(fitted.values);
    source = "crossfit";
    crossfit = Json{{"folds", args.folds},
                    {"seed", args.seed},
                    {"propensity_clamps", fitted.propensity_clamps},
                    {"outcome_clamps", fitted.outcome_clamps}};
  }
  const auto checked = validate(std::move(input.data), std::move(nuis));
  const auto report = estimate(method, checked.data, checked.nuisance, options);

  Json doc;
  doc["method"] = std::string(to_string(report.method));
  doc["n"] = checked.data.size();
  doc["psi_hat"] = report.psi_hat;
  doc["psi_dr"] = report.psi_dr;
  doc["se"] = report.se;
  doc["ci"] = Json::array({report.ci_lo, report.ci_hi});
  doc["alpha"] = report.alpha;
  doc["h"] = optional_number(report.h_used);
  doc["bandwidth_source"] = report.bandwidth_source;
  doc["kernel"] = std::string(to_string(options.family));
  doc["correction"] = report.correction;
  doc["min_qhat"] = optional_number(report.min_qhat);
  doc["qhat_floored"] = report.clamp_count;
  doc["nuisance_source"] = source;
  doc["crossfit"] = crossfit;
  emit(doc, args.out, out);
  return kExitOk;
}

struct SimulateArgs {
  std::string out = ".";
  std::vector<std::size_t> n{500, 1000, 1500, 2000};
  std::size_t reps = 500;
  double r_pi = 0.3;
  double r_mu = 0.3;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  std::vector<std::string> methods{"aipw", "omega", "mu", "main"};
  std::string h = "cv";
  std::string kernel = "box";
  std::string perturbation = "per-coordinate";
  std::string support = "unit";
};

int cmd_simulate(const SimulateArgs& args, std::ostream& out, std::ostream& err) {
  SimulationConfig config;
  config.n_values = args.n;
  config.reps = args.reps;
  config.r_pi = args.r_pi;
  config.r_mu = args.r_mu;
  config.alpha = args.alpha;
  config.seed = args.seed;
  config.methods.clear();
  for (const auto& m : args.methods) config.methods.push_back(parse_sim_method(m));
  const auto bandwidth = parse_bandwidth(args.h);
  if (bandwidth.rule == BandwidthRule::fixed) {
    throw Error(Errc::invalid_input, "simulate takes --h cv or --h rate");
  }
  config.bandwidth = bandwidth.rule;
  config.family = parse_kernel_family(args.kernel);
  if (args.perturbation == "per-coordinate") {
    config.perturbation = PerturbationMode::per_coordinate;
  } else if (args.perturbation == "common-scalar") {
    config.perturbation = PerturbationMode::common_scalar;
  } else {
    throw Error(Errc::invalid_input, "unknown perturbation '" + args.perturbation + "'");
  }
  if (args.support == "unit") {
    config.dgp.covariate_lower = 0.0;
    config.dgp.covariate_upper = 1.0;
  } else if (args.support == "symmetric") {
    config.dgp.covariate_lower = -1.0;
    config.dgp.covariate_upper = 1.0;
  } else {
    throw Error(Errc::invalid_input, "unknown covariate support '" + args.support + "'");
  }
  if (config.n_values.empty() || config.reps == 0) throw Error(Errc::invalid_input, "need at least one n and one rep");
  for (std::size_t n : config.n_values) {
    if (n < 2) throw Error(Errc::invalid_input, "every n must be at least 2");
  }
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw Error(Errc::invalid_input, "alpha must lie in (0, 1)");

  const auto results = run_monte_carlo(config);

  std::error_code ec;
  std::filesystem::create_directories(args.out, ec);
  const auto dir = std::filesystem::path(args.out);
  {
    std::ofstream errors(dir / "errors.csv");
    std::ofstream coverage(dir / "coverage.csv");
    if (!errors || !coverage) throw Error(Errc::io_error, "cannot write CSVs into '" + args.out + "'");
    write_errors_csv(results, errors);
    write_coverage_csv(results, coverage);
  }

  Json cells = Json::array();
  bool dead_cell = false;
  for (const auto& c : results.cells) {
    cells.push_back(Json{{"method", std::string(to_string(c.method))},
                         {"n", c.n},
                         {"completed", c.completed},
                         {"failures", c.failures},
                         {"coverage", c.coverage},
                         {"mean_error", c.mean_error},
                         {"rmse", c.rmse},
                         {"mean_width", c.mean_width}});
    dead_cell = dead_cell || c.completed == 0;
  }
  Json doc{{"psi", results.psi}, {"reps", config.reps}, {"seed", config.seed}, {"out", args.out}, {"cells", cells}};
  out << doc.dump(2) << "\n";
  if (dead_cell) {
    err << "error: every replicate of at least one (method, n) cell failed\n";
    return kExitComputation;
  }
  return kExitOk;
}

struct LowerboundArgs {
  std::string out;
  std::string variant = "pure";
  double eps = 0.01;
  double delta = 0.02;
  int k = 2;
  int d = 1;
  std::vector<double> lambda;
  double omega_hat = 2.0;
  double mu_hat = 0.5;
  int panels = 32;
  int points = 8;
};

int cmd_lowerbound(const LowerboundArgs& args, std::ostream& out, std::ostream& err) {
  const auto variant = parse_variant(args.variant);
  const auto basis = make_bump_basis(args.k, args.d);
  auto lambda = args.lambda;
  if (lambda.empty()) lambda.assign(static_cast<std::size_t>(args.k), 1.0);
  const QuadratureOptions quadrature{args.panels, args.points};
  const auto pair = build_pair(variant, args.eps, args.delta, basis, lambda, constant_surface(args.omega_hat),
                               constant_surface(args.mu_hat), quadrature);
  const auto r = verify_pair(pair, quadrature);

  Json norms = Json::array();
  for (const auto& c : r.norms) {
    norms.push_back(Json{{"name", c.name},
                         {"measured", c.measured},
                         {"expected", c.expected},
                         {"budget", c.budget},
                         {"error", c.error},
                         {"within_budget", c.within_budget},
                         {"ok", c.ok}});
  }
  Json doc;
  doc["variant"] = std::string(to_string(r.variant));
  doc["eps"] = r.eps;
  doc["delta"] = r.delta;
  doc["gamma"] = r.gamma;
  doc["k"] = r.k;
  doc["d"] = r.d;
  doc["lambda"] = lambda;
  doc["omega_hat"] = args.omega_hat;
  doc["mu_hat"] = args.mu_hat;
  doc["g"] = r.g;
  doc["measure"] = r.measure;
  doc["grid_points"] = r.grid_points;
  doc["psi_p"] = r.psi_p;
  doc["psi_q"] = r.psi_q;
  doc["gap"] = r.gap;
  doc["gap_closed_form"] = r.gap_closed_form;
  doc["gap_error"] = r.gap_error;
  doc["gap_ok"] = r.gap_ok;
  doc["norms"] = norms;
  doc["norms_ok"] = r.norms_ok;
  doc["density_p"] = r.density_p;
  doc["density_q"] = r.density_q;
  doc["joint_mass_p"] = r.joint_mass_p;
  doc["joint_mass_q"] = r.joint_mass_q;
  doc["density_ok"] = r.density_ok;
  doc["lambda_average_error"] = optional_number(r.lambda_average_error);
  doc["lambda_ok"] = r.lambda_ok;
  doc["passed"] = r.passed();
  emit(doc, args.out, out);
  if (!r.passed()) {
    err << "error: verification failed\n";
    return kExitComputation;
  }
  return kExitOk;
}

struct PlmArgs {
  std::string input;
  std::string out;
  std::string h = "cv";
  std::string kernel = "box";
  double alpha = 0.05;
  int folds = 5;
  std::uint64_t seed = 1;
  bool uncorrected = false;
};

int cmd_plm(const PlmArgs& args, std::ostream& out) {
  auto input = parse_plm_table(read_csv_file(args.input));
  const std::size_t n = input.sample.size();
  // Structural checks before any nuisance fitting.
  validate_plm(input.sample, PlmNuisance{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  std::string source = "supplied";
  PlmNuisance nuis;
  if (input.nuisance) {
    nuis = std::move(*input.nuisance);
  } else {
    nuis = crossfit_plm_nuisances(input.sample, make_folds(n, args.folds, args.seed));
    source = "crossfit";
  }
  const auto bandwidth = parse_bandwidth(args.h);
  PlmOptions options;
  options.bandwidth = bandwidth.rule;
  options.h = bandwidth.h;
  options.family = parse_kernel_family(args.kernel);
  options.alpha = args.alpha;
  options.corrected = !args.uncorrected;
  const auto r = solve_theta(input.sample, nuis, options);

  Json doc;
  doc["theta_hat"] = r.theta_hat;
  doc["se"] = r.se;
  doc["ci"] = Json::array({r.ci_lo, r.ci_hi});
  doc["alpha"] = r.alpha;
  doc["n"] = n;
  doc["bracket"] = Json::array({r.bracket_lo, r.bracket_hi});
  doc["iterations"] = r.iterations;
  doc["moment_at_root"] = r.moment_at_root;
  doc["correction"] = r.correction;
  doc["derivative"] = r.derivative;
  doc["h"] = optional_number(r.h_used);
  doc["bandwidth_source"] = r.bandwidth_source;
  doc["min_qhat"] = optional_number(r.min_qhat);
  doc["qhat_floored"] = r.clamp_count;
  doc["nuisance_source"] = source;
  emit(doc, args.out, out);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Doubly-robust estimation of E{mu(X)} with kernel U-statistic corrections", "drustat"};
  // -h is taken by the bandwidth option, so help is --help only.
  app.set_help_flag("--help", "print this help and exit");
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: hardware concurrency)")
      ->envname("DRUSTAT_THREADS")
      ->check(CLI::PositiveNumber);

  EstimateArgs est;
  auto* estimate_cmd = app.add_subcommand("estimate", "estimate psi from a CSV of y, a, x1..xd[, omega_hat, mu_hat]");
  estimate_cmd->add_option("input", est.input, "input CSV")->required();
  estimate_cmd->add_option("--method", est.method, "aipw, omega, mu or main")->capture_default_str();
  estimate_cmd->add_option("--h", est.h, "bandwidth: a positive number, 'cv' or 'rate'")->capture_default_str();
  estimate_cmd->add_option("--kernel", est.kernel, "box or epanechnikov")->capture_default_str();
  estimate_cmd->add_option("--alpha", est.alpha, "1 - confidence level")->capture_default_str();
  estimate_cmd->add_option("--folds", est.folds, "cross-fitting folds when nuisances are missing")->capture_default_str();
  estimate_cmd->add_option("--seed", est.seed, "fold seed")->capture_default_str();
  estimate_cmd->add_option("--out", est.out, "write the JSON report here instead of stdout");

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo coverage study; writes errors.csv and coverage.csv");
  simulate_cmd->add_option("--n", sim.n, "sample sizes")->delimiter(',')->capture_default_str();
  simulate_cmd->add_option("--reps", sim.reps, "replicates per sample size")->capture_default_str();
  simulate_cmd->add_option("--r-pi", sim.r_pi, "propensity convergence exponent")->capture_default_str();
  simulate_cmd->add_option("--r-mu", sim.r_mu, "outcome convergence exponent")->capture_default_str();
  simulate_cmd->add_option("--alpha", sim.alpha, "1 - confidence level")->capture_default_str();
  simulate_cmd->add_option("--seed", sim.seed, "master seed")->capture_default_str();
  simulate_cmd->add_option("--method", sim.methods, "methods: aipw, omega, mu, main, oracle")
      ->delimiter(',')
      ->capture_default_str();
  simulate_cmd->add_option("--h", sim.h, "bandwidth rule: 'cv' or 'rate'")->capture_default_str();
  simulate_cmd->add_option("--kernel", sim.kernel, "box or epanechnikov")->capture_default_str();
  simulate_cmd->add_option("--perturbation", sim.perturbation, "per-coordinate or common-scalar")
      ->capture_default_str();
  simulate_cmd->add_option("--support", sim.support, "covariate support: unit (0,1) or symmetric (-1,1)")
      ->capture_default_str();
  simulate_cmd->add_option("--out", sim.out, "output directory")->capture_default_str();

  LowerboundArgs lb;
  auto* lowerbound_cmd = app.add_subcommand("lowerbound", "build and verify a lower-bound density pair");
  lowerbound_cmd->add_option("--variant", lb.variant, "pure, hybrid-omega, hybrid-mu or hybrid-both")
      ->capture_default_str();
  lowerbound_cmd->add_option("--eps", lb.eps, "omega fluctuation size")->capture_default_str();
  lowerbound_cmd->add_option("--delta", lb.delta, "mu fluctuation size")->capture_default_str();
  lowerbound_cmd->add_option("--k", lb.k, "number of bump cubes")->capture_default_str();
  lowerbound_cmd->add_option("--d", lb.d, "covariate dimension (1 to 3)")->capture_default_str();
  lowerbound_cmd->add_option("--lambda", lb.lambda, "signs, one per cube (default all +1)")->delimiter(',');
  lowerbound_cmd->add_option("--omega-hat", lb.omega_hat, "constant base omega_hat")->capture_default_str();
  lowerbound_cmd->add_option("--mu-hat", lb.mu_hat, "constant base mu_hat")->capture_default_str();
  lowerbound_cmd->add_option("--panels", lb.panels, "quadrature panels per axis")->capture_default_str();
  lowerbound_cmd->add_option("--points", lb.points, "Gauss-Legendre points per panel")->capture_default_str();
  lowerbound_cmd->add_option("--out", lb.out, "write the JSON report here instead of stdout");

  PlmArgs plm;
  auto* plm_cmd = app.add_subcommand("plm", "partially linear logistic model from a CSV of y, a, x1..xd[, v_hat, m_hat]");
  plm_cmd->add_option("input", plm.input, "input CSV")->required();
  plm_cmd->add_option("--h", plm.h, "bandwidth: a positive number, 'cv' or 'rate'")->capture_default_str();
  plm_cmd->add_option("--kernel", plm.kernel, "box or epanechnikov")->capture_default_str();
  plm_cmd->add_option("--alpha", plm.alpha, "1 - confidence level")->capture_default_str();
  plm_cmd->add_option("--folds", plm.folds, "cross-fitting folds when nuisances are missing")->capture_default_str();
  plm_cmd->add_option("--seed", plm.seed, "fold seed")->capture_default_str();
  plm_cmd->add_flag("--uncorrected", plm.uncorrected, "solve the moment without the kernel correction");
  plm_cmd->add_option("--out", plm.out, "write the JSON report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitInput;
  }

  const int previous_threads = thread_count();
  const unsigned hardware = std::thread::hardware_concurrency();
  set_thread_count(threads > 0 ? threads : static_cast<int>(std::max(1U, hardware)));
  int code = kExitOk;
  try {
    if (*estimate_cmd) code = cmd_estimate(est, out);
    if (*simulate_cmd) code = cmd_simulate(sim, out, err);
    if (*lowerbound_cmd) code = cmd_lowerbound(lb, out, err);
    if (*plm_cmd) code = cmd_plm(plm, out);
  } catch (const Error& e) {
    err << "error: " << e.what();
    if (e.row()) err << " (data row " << *e.row() + 1 << ")";
    err << "\n";
    code = is_input_error(e.code()) ? kExitInput : kExitComputation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    code = kExitComputation;
  }
  set_thread_count(previous_threads);
  return code;
}

}  // namespace drustat
