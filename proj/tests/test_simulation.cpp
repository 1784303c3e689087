#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "cubedesign/simulation.hpp"

using namespace cubedesign;
using Catch::Approx;

namespace {

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

bool same_results(const ExperimentOutput& a, const ExperimentOutput& b) {
  if (a.summary.size() != b.summary.size() || a.raw.size() != b.raw.size()) return false;
  for (std::size_t k = 0; k < a.summary.size(); ++k) {
    const auto &x = a.summary[k], &y = b.summary[k];
    if (x.design_name != y.design_name || x.p_used != y.p_used || x.replications != y.replications) return false;
    for (auto field : {&ExperimentResult::mean_imbalance, &ExperimentResult::imbalance_se, &ExperimentResult::rmse, &ExperimentResult::rmse_se,
                       &ExperimentResult::bias, &ExperimentResult::sd, &ExperimentResult::coverage, &ExperimentResult::coverage_se,
                       &ExperimentResult::power, &ExperimentResult::mean_variance_hat})
      if (!same(x.*field, y.*field)) return false;
  }
  for (std::size_t k = 0; k < a.raw.size(); ++k)
    if (a.raw[k].design_name != b.raw[k].design_name || a.raw[k].replication != b.raw[k].replication || a.raw[k].value != b.raw[k].value)
      return false;
  return true;
}

// Projections of Y(1) and Y(0) on (1, X) from a large sample, for an
// independent check of the closed-form moments.
struct Projection {
  std::vector<double> fit1, fit0, resid1, resid0;
};

Projection project(const DgpSample& s) {
  const std::size_t n = s.x.rows(), p = s.x.cols();
  Matrix design(n, p + 1);
  for (std::size_t i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) design(i, j + 1) = s.x(i, j);
  }
  Projection out;
  out.fit1 = multiply(design, solve_ols(design, s.y1));
  out.fit0 = multiply(design, solve_ols(design, s.y0));
  for (std::size_t i = 0; i < n; ++i) {
    out.resid1.push_back(s.y1[i] - out.fit1[i]);
    out.resid0.push_back(s.y0[i] - out.fit0[i]);
  }
  return out;
}

}  // namespace

TEST_CASE("noiseless model without effects has identical potential outcomes") {
  SimpleDgpConfig config;
  config.n = 50;
  config.p = 4;
  config.beta0 = config.beta1 = std::vector<double>(4, 0.0);
  config.interaction_scale = 0.0;
  config.error_sd = 0.0;
  RandomStream rng(1);
  const auto s = simple_dgp(config, rng);
  REQUIRE(s.pate == 0.0);
  for (std::size_t i = 0; i < 50; ++i) REQUIRE(s.y1[i] - s.y0[i] == Approx(0.0).margin(1e-15));
}

TEST_CASE("interaction term has mean zero") {
  SimpleDgpConfig config;
  config.n = 10000;
  config.p = 30;
  config.beta0 = config.beta1 = std::vector<double>(30, 0.0);
  config.error_sd = 0.0;
  double sum = 0.0, sq = 0.0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    RandomStream rng(static_cast<std::uint64_t>(r));
    const auto s = simple_dgp(config, rng);
    for (double v : s.y1) {
      sum += v - 1.0;
      sq += (v - 1.0) * (v - 1.0);
    }
  }
  const double count = static_cast<double>(config.n) * reps;
  const double mean = sum / count, var = sq / count - mean * mean;
  REQUIRE(std::abs(mean) <= 4.0 * std::sqrt(var / count));
  // s^2 * 2 p (p - 1) / 144 for independent centered uniforms.
  REQUIRE(var == Approx(0.0025 * 2.0 * 30.0 * 29.0 / 144.0).epsilon(0.02));
}

TEST_CASE("covariates are standard uniforms") {
  SimpleDgpConfig config;
  config.n = 20000;
  RandomStream rng(2);
  const auto s = simple_dgp(config, rng);
  const double count = static_cast<double>(s.x.data().size());
  double sum = 0.0, sq = 0.0;
  for (double v : s.x.data()) {
    sum += v;
    sq += v * v;
  }
  const double mean = sum / count, var = sq / count - mean * mean;
  REQUIRE(std::abs(mean - 0.5) <= 4.0 * std::sqrt(1.0 / 12.0 / count));
  REQUIRE(std::abs(var - 1.0 / 12.0) <= 4.0 * std::sqrt(1.0 / 180.0 / count));
}

TEST_CASE("default model moments") {
  const SimpleDgpConfig config;
  REQUIRE(true_pate(config) == 1.0);
  REQUIRE(sigma0(config) == Approx(9.75).epsilon(1e-14));
  REQUIRE(v0_star(config) == Approx(1.0 / 12.0 + 2.0 * (1.0 + 0.0025 * 2.0 * 30.0 * 29.0 / 144.0) + 2.0).epsilon(1e-14));
}

TEST_CASE("closed-form moments agree with large-sample projections") {
  SimpleDgpConfig config;
  config.n = 200000;
  config.p = 3;
  config.beta0 = {0.5, -1.0, 2.0};
  config.beta1 = {1.5, 0.25, -0.5};
  config.interaction_scale = 0.3;
  config.error_sd = 0.7;
  RandomStream rng(3);
  const auto s = simple_dgp(config, rng);
  const auto proj = project(s);
  const double n = static_cast<double>(config.n);

  double pate = 0.0;
  for (std::size_t i = 0; i < config.n; ++i) pate += (s.y1[i] - s.y0[i]) / n;
  REQUIRE(pate == Approx(true_pate(config)).margin(0.02));

  // At pi = 1/2 the weight pi / (1 - pi) is 1 and Z0'(b1 + b0) is the sum of
  // the two projections.
  double sig = 0.0;
  for (std::size_t i = 0; i < config.n; ++i) sig += (proj.fit1[i] + proj.fit0[i]) * (proj.fit1[i] + proj.fit0[i]) / n;
  REQUIRE(sig == Approx(sigma0(config)).epsilon(0.01));

  double mean_diff = 0.0;
  for (std::size_t i = 0; i < config.n; ++i) mean_diff += (proj.fit1[i] - proj.fit0[i]) / n;
  double v = 0.0;
  for (std::size_t i = 0; i < config.n; ++i) {
    const double c = proj.fit1[i] - proj.fit0[i] - mean_diff;
    v += (c * c + 2.0 * proj.resid1[i] * proj.resid1[i] + 2.0 * proj.resid0[i] * proj.resid0[i]) / n;
  }
  REQUIRE(v == Approx(v0_star(config)).epsilon(0.01));
}

TEST_CASE("coefficient lengths are validated") {
  SimpleDgpConfig config;
  config.p = 3;
  config.beta0 = {1.0, 2.0};
  RandomStream rng(4);
  REQUIRE_THROWS_AS(simple_dgp(config, rng), Error);
}

TEST_CASE("design names round trip") {
  for (const char* name : {"ct", "cr", "s2", "s3", "mp", "cube"}) REQUIRE(DesignChoice::parse(name).name() == name);
  for (const char* bad : {"s1", "s", "sx", "cubes", ""}) REQUIRE_THROWS_AS(DesignChoice::parse(bad), Error);
}

TEST_CASE("imbalance experiment layout and determinism") {
  const std::vector<DesignChoice> designs{DesignChoice::parse("ct"), DesignChoice::parse("cr"), DesignChoice::parse("s2"),
                                          DesignChoice::parse("mp"), DesignChoice::parse("cube")};
  const std::vector<std::size_t> grid{1, 3};
  const auto a = run_imbalance_experiment(60, grid, designs, 25, 42, 1);
  const auto b = run_imbalance_experiment(60, grid, designs, 25, 42, 4);
  REQUIRE(a.summary.size() == designs.size() * grid.size());
  REQUIRE(a.raw.size() == designs.size() * grid.size() * 25);
  REQUIRE(same_results(a, b));
  for (const auto& r : a.summary) {
    REQUIRE(r.mean_imbalance >= 0.0);
    REQUIRE(r.imbalance_se >= 0.0);
    REQUIRE(std::isnan(r.rmse));
  }
  const auto c = run_imbalance_experiment(60, grid, designs, 25, 43, 1);
  REQUIRE_FALSE(same_results(a, c));
}

TEST_CASE("imbalance of coin toss and complete randomization") {
  const std::vector<DesignChoice> designs{DesignChoice::parse("ct"), DesignChoice::parse("cr")};
  const auto out = run_imbalance_experiment(200, {4}, designs, 2000, 7);
  REQUIRE(std::abs(out.summary[0].mean_imbalance - 16.0 / 600.0) <= 5.0 * out.summary[0].imbalance_se);
  REQUIRE(std::abs(out.summary[1].mean_imbalance - 4.0 / 600.0) <= 5.0 * out.summary[1].imbalance_se);
}

TEST_CASE("rmse experiment summary identities") {
  SimpleDgpConfig config;
  config.n = 80;
  config.p = 6;
  const std::vector<DesignChoice> designs{DesignChoice::parse("cr"), DesignChoice::parse("cube")};
  const auto a = run_rmse_experiment(config, designs, {1, 6}, 60, 1);
  const auto b = run_rmse_experiment(config, designs, {1, 6}, 60, 4);
  REQUIRE(same_results(a, b));
  for (const auto& r : a.summary) {
    const double reps = static_cast<double>(r.replications);
    REQUIRE(r.rmse * r.rmse == Approx(r.bias * r.bias + r.sd * r.sd * (reps - 1.0) / reps).epsilon(1e-10));
  }
  REQUIRE_THROWS_AS(run_rmse_experiment(config, designs, {7}, 10), Error);
}

TEST_CASE("coverage experiment bounds and power with little noise") {
  SimpleDgpConfig config;
  config.n = 120;
  config.p = 2;
  config.error_sd = 1e-3;
  config.interaction_scale = 0.0;
  const auto out = run_coverage_experiment(config, 2, 40, 0.05, 1);
  const auto& r = out.summary.front();
  REQUIRE(r.design_name == "cube");
  REQUIRE(r.coverage >= 0.0);
  REQUIRE(r.coverage <= 1.0);
  REQUIRE(r.power == 1.0);
  REQUIRE(out.raw.size() == 40);
  REQUIRE(same_results(out, run_coverage_experiment(config, 2, 40, 0.05, 4)));
}
