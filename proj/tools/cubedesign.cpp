// Command-line front end: treatment assignment, balance reports, effect
// estimates, Monte Carlo experiments and randomization tests from CSV files.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cubedesign/cubedesign.hpp"

namespace cd = cubedesign;
namespace csv = cubedesign::csv;

namespace {

constexpr int kExitCsv = 2;
constexpr int kExitDesign = 3;
constexpr int kExitNumerical = 4;
constexpr std::uint64_t kDefaultSeed = 42;

struct IoOptions {
  std::string input;
  std::string output = "-";
  std::vector<std::string> covariates;
};

struct CubeOptions {
  std::string moments = "first";
  std::string landing = "lp";
  std::string cost = "identity";
  std::size_t lp_max_unresolved = cd::default_tolerances.lp_max_unresolved;

  cd::BalanceSpec spec(std::size_t p) const {
    cd::BalanceSpec s;
    if (moments == "second") s.moments.assign(p, cd::MomentSet::FirstAndSecond);
    return s;
  }

  cd::LandingPolicy policy() const {
    cd::LandingPolicy out;
    out.mode = landing == "suppression" ? cd::LandingMode::Suppression : cd::LandingMode::LinearProgram;
    out.cost = cost == "inverse_covariance" ? cd::CostKind::InverseCovariance : cd::CostKind::Identity;
    out.lp_max_unresolved = lp_max_unresolved;
    return out;
  }
};

/// Units read from an input CSV. Optional columns stay empty when absent.
struct Units {
  std::vector<std::string> ids;
  std::vector<std::string> covariate_names;
  cd::Matrix x;
  std::vector<double> pi;
  std::vector<double> y;
  std::vector<int> d;
};

std::vector<int> read_indicator(const csv::Table& t, const std::string& name) {
  const std::size_t col = t.require(name);
  std::vector<int> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& cell = t.rows[r][col];
    if (cell != "0" && cell != "1")
      throw csv::CsvError("line " + std::to_string(r + 2) + ", column '" + name + "': '" + cell + "' is not 0 or 1");
    out.push_back(cell == "1");
  }
  return out;
}

Units read_units(const IoOptions& io, bool need_y, bool need_d) {
  const csv::Table t = csv::read_file(io.input);
  if (t.rows.empty()) throw csv::CsvError("'" + io.input + "' has a header but no units");
  Units u;
  const std::size_t id_col = t.require("unit_id");
  for (const auto& row : t.rows) u.ids.push_back(row[id_col]);
  if (io.covariates.empty()) {
    static const std::regex covariate_name("x[0-9]+");
    for (const auto& h : t.header)
      if (std::regex_match(h, covariate_name)) u.covariate_names.push_back(h);
  } else {
    u.covariate_names = io.covariates;
  }
  u.x = cd::Matrix(t.rows.size(), u.covariate_names.size());
  for (std::size_t j = 0; j < u.covariate_names.size(); ++j) {
    const auto values = t.numbers(u.covariate_names[j]);
    for (std::size_t i = 0; i < values.size(); ++i) u.x(i, j) = values[i];
  }
  if (t.find("pi"))
    u.pi = t.numbers("pi");
  else
    u.pi.assign(t.rows.size(), 0.5);
  if (need_y) u.y = t.numbers("y");
  if (need_d) u.d = read_indicator(t, "d");
  return u;
}

/// Replaces d and pi with those of an assignment file, matched by unit_id.
void join_assignment(Units& u, const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const std::size_t id_col = t.require("unit_id");
  const auto d = read_indicator(t, "d");
  const auto pi = t.numbers("pi");
  std::map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (!row_of.emplace(t.rows[r][id_col], r).second)
      throw csv::CsvError("'" + path + "' lists unit '" + t.rows[r][id_col] + "' twice");
  u.d.assign(u.ids.size(), 0);
  u.pi.assign(u.ids.size(), 0.5);
  for (std::size_t i = 0; i < u.ids.size(); ++i) {
    const auto it = row_of.find(u.ids[i]);
    if (it == row_of.end()) throw csv::CsvError("unit '" + u.ids[i] + "' has no row in '" + path + "'");
    u.d[i] = d[it->second];
    u.pi[i] = pi[it->second];
  }
}

/// Range check on pi that names the offending unit by its identifier.
void check_pi(const Units& u) {
  const double c = cd::default_tolerances.propensity_margin;
  for (std::size_t i = 0; i < u.pi.size(); ++i)
    if (!(u.pi[i] >= c && u.pi[i] <= 1.0 - c))
      throw cd::Error(cd::ErrorCode::PropensityOutOfRange,
                      "unit '" + u.ids[i] + "' (line " + std::to_string(i + 2) + ") has pi = " + csv::format(u.pi[i]) +
                          "; assignment probabilities must lie in [" + csv::format(c) + ", " + csv::format(1.0 - c) + "]");
}

void require_half(const Units& u, const std::string& design) {
  for (std::size_t i = 0; i < u.pi.size(); ++i)
    if (u.pi[i] != 0.5)
      throw cd::Error(cd::ErrorCode::InvalidProbability,
                      "design '" + design + "' needs pi = 0.5 for every unit; unit '" + u.ids[i] + "' has pi = " + csv::format(u.pi[i]));
}

/// Writes to a file, or to standard output for "-". File output is written
/// only after the whole text is ready.
void emit(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::size_t threads() { return cd::threads_from_environment(); }

void add_io(CLI::App* cmd, IoOptions& io) {
  cmd->add_option("-i,--input", io.input, "Input CSV file")->check(CLI::ExistingFile)->required();
  cmd->add_option("-o,--output", io.output, "Output CSV file ('-' for standard output)")->capture_default_str();
  cmd->add_option("--covariates", io.covariates, "Covariate columns (default: every column named x<k>)")->delimiter(',');
}

void add_cube(CLI::App* cmd, CubeOptions& cube) {
  cmd->add_option("--moments", cube.moments, "Balanced moments of each covariate")
      ->check(CLI::IsMember({"first", "second"}))
      ->capture_default_str();
  cmd->add_option("--landing", cube.landing, "Landing method")->check(CLI::IsMember({"lp", "suppression"}))->capture_default_str();
  cmd->add_option("--cost", cube.cost, "Landing cost matrix")
      ->check(CLI::IsMember({"identity", "inverse_covariance"}))
      ->capture_default_str();
  cmd->add_option("--lp-max-unresolved", cube.lp_max_unresolved, "Largest landing handled by the linear program")
      ->check(CLI::Range(1, 20))
      ->capture_default_str();
}

void add_seed(CLI::App* cmd, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Master random seed")->capture_default_str();
}

// ---------------------------------------------------------------- assign

struct AssignOptions {
  IoOptions io;
  CubeOptions cube;
  std::string design = "cube";
  std::uint64_t seed = kDefaultSeed;
};

int cmd_assign(const AssignOptions& opt) {
  const Units u = read_units(opt.io, false, false);
  const cd::DesignChoice design = cd::DesignChoice::parse(opt.design);
  check_pi(u);
  if (design.kind != cd::DesignKind::CoinToss && design.kind != cd::DesignKind::Cube) require_half(u, design.name());
  cd::RandomStream rng = cd::RandomStream(opt.seed).substream(cd::streams::design);

  cd::Assignment a;
  if (design.kind == cd::DesignKind::Cube) {
    const auto outcome = cd::cube_run(u.x, u.pi, opt.cube.spec(u.x.cols()), opt.cube.policy(), rng);
    a = outcome.assignment;
    if (!outcome.constraints.dropped.empty()) {
      std::string names;
      for (const auto& n : outcome.constraints.dropped) names += (names.empty() ? "" : ", ") + n;
      std::cerr << "note: dropped collinear balancing constraints: " << names << '\n';
    }
    if (a.landing_units > 0)
      std::cerr << "note: " << a.landing_units << " unit(s) resolved in the landing phase (" << a.landing_mode << ")\n";
  } else {
    a = cd::draw_design(design, u.x, u.pi, rng);
  }

  std::ostringstream out;
  csv::Writer w(out);
  w.row({"unit_id", "d", "pi", "design", "seed"});
  for (std::size_t i = 0; i < u.ids.size(); ++i)
    w.row({u.ids[i], std::to_string(a.d[i]), csv::format(u.pi[i]), design.name(), std::to_string(opt.seed)});
  emit(opt.io.output, out.str());
  return 0;
}

// --------------------------------------------------------------- balance

struct BalanceOptions {
  IoOptions io;
  std::string assignment;
};

int cmd_balance(const BalanceOptions& opt) {
  Units u = read_units(opt.io, false, opt.assignment.empty());
  if (!opt.assignment.empty()) join_assignment(u, opt.assignment);
  check_pi(u);
  if (u.x.cols() == 0) throw csv::CsvError("no covariate columns found in '" + opt.io.input + "'");
  const cd::BalanceReport report = cd::balance_report(u.x, u.d, u.pi);
  const std::string norm = report.b_norm_sq ? csv::format(*report.b_norm_sq) : "NA";
  std::ostringstream out;
  csv::Writer w(out);
  w.row({"covariate", "delta", "t_stat", "p_value", "b_norm_sq"});
  for (std::size_t j = 0; j < u.x.cols(); ++j)
    w.row({u.covariate_names[j], csv::format(report.delta[j]), csv::format(report.t_stats[j]), csv::format(report.p_values[j]), norm});
  emit(opt.io.output, out.str());
  return 0;
}

// -------------------------------------------------------------- estimate

struct EstimateOptions {
  IoOptions io;
  std::string assignment;
  std::vector<std::string> estimators{"horvitz_thompson"};
  double alpha = 0.05;
  std::size_t strata = 2;
};

int cmd_estimate(const EstimateOptions& opt) {
  Units u = read_units(opt.io, true, opt.assignment.empty());
  if (!opt.assignment.empty()) join_assignment(u, opt.assignment);
  check_pi(u);
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw cd::Error(cd::ErrorCode::DomainError, "alpha must lie in (0, 1)");

  std::optional<double> variance;
  auto pate_variance = [&] {
    if (!variance) {
      // Collinear regressors do not change the fits; keeping an independent
      // subset lets small samples meet the per-arm size requirement.
      const auto [z1, z0] = cd::balancing_covariates(u.x, u.pi);
      const auto cols = cd::reduce_row_echelon(z1).pivot_columns;
      variance = cd::pate_variance(u.y, u.d, u.pi, z1.select_columns(cols), z0.select_columns(cols));
    }
    return *variance;
  };

  std::ostringstream out;
  csv::Writer w(out);
  w.row({"estimator", "theta_hat", "variance_hat", "ci_low", "ci_high", "alpha"});
  for (const auto& name : opt.estimators) {
    if (name == "strata_fe") {
      const auto partition = cd::stratify_by_quantiles(u.x, opt.strata);
      const auto fe = cd::strata_fe_estimate(u.y, u.d, partition);
      if (fe.dropped_strata > 0)
        std::cerr << "note: " << fe.dropped_strata << " stratum(s) without both treated and control units were left out\n";
      w.row({name, csv::format(fe.theta_hat), "NA", "NA", "NA", csv::format(opt.alpha)});
      continue;
    }
    const auto kind = name == "hajek" ? cd::EstimatorKind::Hajek : cd::EstimatorKind::HorvitzThompson;
    const double theta = kind == cd::EstimatorKind::Hajek ? cd::hajek(u.y, u.d, u.pi) : cd::horvitz_thompson(u.y, u.d, u.pi);
    const auto est = cd::make_estimate(kind, theta, pate_variance(), opt.alpha);
    w.row({name, csv::format(est.theta_hat), csv::format(est.variance_hat), csv::format(est.ci_low), csv::format(est.ci_high),
           csv::format(opt.alpha)});
  }
  emit(opt.io.output, out.str());
  return 0;
}

// -------------------------------------------------------------- simulate

struct SimulateOptions {
  std::string experiment = "imbalance";
  std::size_t n = 500;
  std::size_t p = 30;
  std::vector<std::size_t> p_grid{1, 5, 10, 20, 30};
  std::size_t p_used = 1;
  std::vector<std::string> designs{"ct", "cr", "s2", "mp", "cube"};
  std::size_t replications = 1000;
  double alpha = 0.05;
  double error_sd = 1.0;
  double interaction_scale = 1.0 / 20.0;
  std::string output = "-";
  std::string raw;
  std::uint64_t seed = kDefaultSeed;
};

int cmd_simulate(const SimulateOptions& opt) {
  std::vector<cd::DesignChoice> designs;
  for (const auto& d : opt.designs) designs.push_back(cd::DesignChoice::parse(d));
  const std::size_t nthreads = threads();
  cd::SimpleDgpConfig config;
  config.n = opt.n;
  config.p = opt.p;
  config.error_sd = opt.error_sd;
  config.interaction_scale = opt.interaction_scale;
  config.seed = opt.seed;

  std::cerr << "simulate: " << opt.experiment << " experiment, n = " << opt.n << ", " << opt.replications << " replications, "
            << nthreads << " thread(s)\n";
  cd::ExperimentOutput result;
  if (opt.experiment == "imbalance") {
    result = cd::run_imbalance_experiment(opt.n, opt.p_grid, designs, opt.replications, opt.seed, nthreads);
  } else if (opt.experiment == "rmse") {
    result = cd::run_rmse_experiment(config, designs, opt.p_grid, opt.replications, nthreads);
  } else {
    result = cd::run_coverage_experiment(config, opt.p_used, opt.replications, opt.alpha, nthreads);
  }
  std::cerr << "simulate: finished " << result.summary.size() << " cell(s) in "
            << (result.summary.empty() ? 0.0 : result.summary.front().wall_time) << " s\n";

  std::ostringstream out;
  csv::Writer w(out);
  w.row({"experiment", "design", "p_used", "replications", "mean_imbalance", "imbalance_se", "rmse", "rmse_se", "bias", "sd",
         "coverage", "coverage_se", "power", "mean_variance_hat"});
  for (const auto& r : result.summary)
    w.row({opt.experiment, r.design_name, std::to_string(r.p_used), std::to_string(r.replications), csv::format(r.mean_imbalance),
           csv::format(r.imbalance_se), csv::format(r.rmse), csv::format(r.rmse_se), csv::format(r.bias), csv::format(r.sd),
           csv::format(r.coverage), csv::format(r.coverage_se), csv::format(r.power), csv::format(r.mean_variance_hat)});
  emit(opt.output, out.str());

  if (!opt.raw.empty()) {
    std::ostringstream raw;
    csv::Writer rw(raw);
    rw.row({"experiment", "design", "p_used", "replication", "value"});
    for (const auto& r : result.raw)
      rw.row({opt.experiment, r.design_name, std::to_string(r.p_used), std::to_string(r.replication), csv::format(r.value)});
    emit(opt.raw, raw.str());
  }
  return 0;
}

// ----------------------------------------------------------------- infer

struct InferOptions {
  IoOptions io;
  CubeOptions cube;
  std::string assignment;
  std::size_t B = 200;
  std::string statistic = "abs_ht";
  std::uint64_t seed = kDefaultSeed;
};

int cmd_infer(const InferOptions& opt) {
  Units u = read_units(opt.io, true, opt.assignment.empty());
  if (!opt.assignment.empty()) join_assignment(u, opt.assignment);
  check_pi(u);
  const auto stat = opt.statistic == "abs_hajek" ? cd::TestStatistic::AbsHajek : cd::TestStatistic::AbsHorvitzThompson;
  const auto res = cd::randomization_test(u.y, u.d, u.x, u.pi, opt.cube.spec(u.x.cols()), opt.cube.policy(), opt.B, stat,
                                          cd::RandomStream(opt.seed), threads());
  std::ostringstream out;
  csv::Writer w(out);
  w.row({"statistic", "statistic_observed", "B", "p_value"});
  w.row({opt.statistic, csv::format(res.statistic_observed), std::to_string(res.B), csv::format(res.p_value)});
  emit(opt.io.output, out.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomized experiment designs: cube-method assignment, balance checks, estimation and simulation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI file with one [section] per subcommand; command-line flags take precedence");
  app.config_formatter(std::make_shared<CLI::ConfigINI>());

  AssignOptions assign;
  auto* c_assign = app.add_subcommand("assign", "Draw a treatment assignment for the units of a covariate CSV");
  add_io(c_assign, assign.io);
  add_cube(c_assign, assign.cube);
  add_seed(c_assign, assign.seed);
  c_assign->add_option("--design", assign.design, "Design: cube, ct, cr, s<ell> or mp")->capture_default_str();

  BalanceOptions balance;
  auto* c_balance = app.add_subcommand("balance", "Per-covariate balance statistics of an assignment");
  add_io(c_balance, balance.io);
  c_balance->add_option("--assignment", balance.assignment, "Assignment CSV joined by unit_id (supplies d and pi)")
      ->check(CLI::ExistingFile);

  EstimateOptions estimate;
  auto* c_estimate = app.add_subcommand("estimate", "Treatment effect estimates with asymptotic confidence intervals");
  add_io(c_estimate, estimate.io);
  c_estimate->add_option("--assignment", estimate.assignment, "Assignment CSV joined by unit_id (supplies d and pi)")
      ->check(CLI::ExistingFile);
  c_estimate->add_option("--estimator", estimate.estimators, "Estimators to report")
      ->delimiter(',')
      ->check(CLI::IsMember({"horvitz_thompson", "hajek", "strata_fe"}))
      ->capture_default_str();
  c_estimate->add_option("--alpha", estimate.alpha, "Confidence level is 1 - alpha")->capture_default_str();
  c_estimate->add_option("--strata", estimate.strata, "Quantile cells per covariate for strata_fe")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  SimulateOptions simulate;
  auto* c_simulate = app.add_subcommand("simulate", "Monte Carlo experiments comparing designs");
  add_seed(c_simulate, simulate.seed);
  c_simulate->add_option("--experiment", simulate.experiment, "Experiment to run")
      ->check(CLI::IsMember({"imbalance", "rmse", "coverage"}))
      ->capture_default_str();
  c_simulate->add_option("--n", simulate.n, "Units per replication")->check(CLI::Range(2, 1000000))->capture_default_str();
  c_simulate->add_option("--p", simulate.p, "Covariates generated by the outcome model")->capture_default_str();
  c_simulate->add_option("--p-grid", simulate.p_grid, "Numbers of balanced covariates")->delimiter(',')->capture_default_str();
  c_simulate->add_option("--p-used", simulate.p_used, "Balanced covariates in the coverage experiment")->capture_default_str();
  c_simulate->add_option("--designs", simulate.designs, "Designs to compare")->delimiter(',')->capture_default_str();
  c_simulate->add_option("--replications", simulate.replications, "Monte Carlo replications")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_simulate->add_option("--alpha", simulate.alpha, "Level of the coverage experiment")->capture_default_str();
  c_simulate->add_option("--error-sd", simulate.error_sd, "Outcome noise standard deviation")->capture_default_str();
  c_simulate->add_option("--interaction-scale", simulate.interaction_scale, "Scale of the pairwise interaction term")
      ->capture_default_str();
  c_simulate->add_option("-o,--output", simulate.output, "Summary CSV ('-' for standard output)")->capture_default_str();
  c_simulate->add_option("--raw", simulate.raw, "Also write one row per design, p and replication to this CSV");

  InferOptions infer;
  auto* c_infer = app.add_subcommand("infer", "Randomization test of no effect by re-drawing cube assignments");
  add_io(c_infer, infer.io);
  add_cube(c_infer, infer.cube);
  add_seed(c_infer, infer.seed);
  c_infer->add_option("--assignment", infer.assignment, "Assignment CSV joined by unit_id (supplies d and pi)")
      ->check(CLI::ExistingFile);
  c_infer->add_option("-B,--draws", infer.B, "Assignments in the reference set, the observed one included")
      ->check(CLI::Range(20, 10000000))
      ->capture_default_str();
  c_infer->add_option("--statistic", infer.statistic, "Test statistic")
      ->check(CLI::IsMember({"abs_ht", "abs_hajek"}))
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_assign->parsed()) return cmd_assign(assign);
    if (c_balance->parsed()) return cmd_balance(balance);
    if (c_estimate->parsed()) return cmd_estimate(estimate);
    if (c_simulate->parsed()) return cmd_simulate(simulate);
    if (c_infer->parsed()) return cmd_infer(infer);
  } catch (const csv::CsvError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCsv;
  } catch (const cd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == cd::ErrorCode::NumericalBreakdown ? kExitNumerical : kExitDesign;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
