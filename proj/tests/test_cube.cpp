#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "cubedesign/balance.hpp"
#include "cubedesign/cube.hpp"
#include "cubedesign/estimators.hpp"

using namespace cubedesign;
using Catch::Approx;

namespace {

Matrix uniform_matrix(std::size_t n, std::size_t p, RandomStream& rng) {
  Matrix x(n, p);
  for (auto& v : x.data()) v = rng.uniform();
  return x;
}

std::vector<double> spread_pi(std::size_t n, RandomStream& rng, double lo = 0.2, double hi = 0.8) {
  std::vector<double> pi(n);
  for (auto& v : pi) v = lo + (hi - lo) * rng.uniform();
  return pi;
}

bool has_code(const Error& e, ErrorCode code) { return e.code() == code; }

// A flight state with the given probabilities; values at 0 or 1 are frozen.
FlightState make_state(std::vector<double> pi0, std::vector<double> pi_t) {
  FlightState s{std::move(pi0), std::move(pi_t), {}, 0};
  for (double v : s.pi_t) s.frozen.push_back(v == 0.0 || v == 1.0);
  return s;
}

ConstraintMatrix single_row(std::vector<double> row) {
  ConstraintMatrix c;
  const std::size_t n = row.size();
  c.a = Matrix(1, n, std::move(row));
  c.labels = {"z"};
  c.candidate_rows = 1;
  return c;
}

}  // namespace

TEST_CASE("homogeneous probabilities collapse the constraint rows") {
  RandomStream rng(1);
  const Matrix x = uniform_matrix(10, 1, rng);
  const std::vector<double> pi(10, 0.5);
  const auto c = build_constraints(x, pi, {});
  REQUIRE(c.rows() == 2);
  REQUIRE(c.candidate_rows == 4);
  REQUIRE(c.labels == std::vector<std::string>{"1", "x1"});
  REQUIRE(c.dropped == std::vector<std::string>{"pi/(1-pi)", "pi"});
  for (std::size_t i = 0; i < 10; ++i) {
    REQUIRE(c.a(0, i) == 2.0);
    // Z_i / pi_i = (X_i / (1 - pi_i)) / pi_i = 4 X_i, the same direction as 2 X_i.
    REQUIRE(c.a(1, i) == Approx(4.0 * x(i, 0)));
  }
}

TEST_CASE("heterogeneous probabilities keep three constant rows") {
  RandomStream rng(2);
  const auto pi = spread_pi(12, rng);
  const Matrix x(12, 0);
  const auto c = build_constraints(x, pi, {});
  REQUIRE(c.rows() == 3);
  REQUIRE(c.labels == std::vector<std::string>{"1", "pi/(1-pi)", "pi"});
}

TEST_CASE("second moments add one row per selected covariate") {
  RandomStream rng(3);
  const auto pi = spread_pi(20, rng);
  const Matrix x = uniform_matrix(20, 2, rng);
  BalanceSpec spec;
  spec.moments = {MomentSet::FirstAndSecond, MomentSet::First};
  const auto c = build_constraints(x, pi, spec);
  REQUIRE(c.rows() == 3 + 3);
  REQUIRE(c.labels.back() == "x2");
  REQUIRE(c.labels[4] == "x1^2");
}

TEST_CASE("constant covariates are filtered as collinear") {
  const Matrix x(8, 2, 0.3);
  const std::vector<double> pi(8, 0.5);
  const auto c = build_constraints(x, pi, {});
  REQUIRE(c.rows() == 1);
}

TEST_CASE("propensities outside the common support are rejected") {
  const Matrix x(3, 1, 0.0);
  for (double bad : {0.0, 0.005, 0.995, 1.0}) {
    const std::vector<double> pi{0.5, bad, 0.5};
    REQUIRE_THROWS_MATCHES(build_constraints(x, pi, {}), Error, Catch::Matchers::Predicate<const Error&>([](const Error& e) {
                             return has_code(e, ErrorCode::PropensityOutOfRange) && std::string(e.what()).find("unit 1") != std::string::npos;
                           }));
  }
}

TEST_CASE("fixed size two out of three resolves in the flight phase") {
  const Matrix a = Matrix::from_rows({{1, 1, 1}});
  const std::vector<double> pi(3, 2.0 / 3.0);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RandomStream rng(seed);
    const auto s = flight_phase(a, pi, rng);
    REQUIRE(s.unfrozen_count() == 0);
    REQUIRE(std::accumulate(s.pi_t.begin(), s.pi_t.end(), 0.0) == 2.0);
  }
}

TEST_CASE("odd sample with fixed size leaves one unit for landing") {
  const Matrix a(1, 101, 1.0);
  const std::vector<double> pi(101, 0.5);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RandomStream rng(seed);
    const auto s = flight_phase(a, pi, rng);
    REQUIRE(s.unfrozen_count() == 1);
    double treated = 0.0;
    for (std::size_t i = 0; i < 101; ++i)
      if (s.frozen[i]) treated += s.pi_t[i];
    REQUIRE(treated == 50.0);
    REQUIRE(s.pi_t[s.unfrozen()[0]] == Approx(0.5));
  }
}

TEST_CASE("no constraints freezes every unit with the right marginals") {
  const Matrix a(0, 5);
  const std::vector<double> pi{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> hits(5, 0.0);
  const int draws = 50000;
  for (int k = 0; k < draws; ++k) {
    RandomStream rng(static_cast<std::uint64_t>(k));
    const auto s = flight_phase(a, pi, rng);
    REQUIRE(s.unfrozen_count() == 0);
    for (std::size_t i = 0; i < 5; ++i) hits[i] += s.pi_t[i];
  }
  for (std::size_t i = 0; i < 5; ++i)
    REQUIRE(std::abs(hits[i] / draws - pi[i]) <= 4.0 * std::sqrt(pi[i] * (1 - pi[i]) / draws));
}

TEST_CASE("flight steps conserve the balancing totals") {
  RandomStream data(4);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 30 + data.below(60), p = 1 + data.below(6);
    const auto pi = spread_pi(n, data, 0.05, 0.95);
    const Matrix x = uniform_matrix(n, p, data);
    const auto c = build_constraints(x, pi, {});
    const auto target = multiply(c.a, pi);
    const double scale = 1.0 + inf_norm(target);
    RandomStream rng(static_cast<std::uint64_t>(trial));
    FlightState s = start_flight(pi);
    while (auto mv = propose_flight_move(c.a, s)) {
      const double prob = mv->prob_up();
      REQUIRE(prob > 0.0);
      REQUIRE(prob < 1.0);
      // E[pi(t+1) | pi(t)] = pi(t): prob * step_up = (1 - prob) * step_down.
      REQUIRE(prob * mv->step_up == Approx((1 - prob) * mv->step_down));
      const std::size_t before = s.unfrozen_count();
      apply_flight_move(s, *mv, rng.uniform() < prob);
      REQUIRE(s.unfrozen_count() < before);
      const auto now = multiply(c.a, s.pi_t);
      for (std::size_t k = 0; k < now.size(); ++k) REQUIRE(std::abs(now[k] - target[k]) <= 1e-7 * scale);
      for (std::size_t i = 0; i < n; ++i) {
        if (s.frozen[i])
          REQUIRE((s.pi_t[i] == 0.0 || s.pi_t[i] == 1.0));
        else
          REQUIRE((s.pi_t[i] > 1e-9 && s.pi_t[i] < 1 - 1e-9));
      }
    }
    REQUIRE(s.unfrozen_count() <= c.rows());
  }
}

TEST_CASE("first flight step is a martingale on the three-unit plane") {
  // Constraint s1 + s2 - s3/2 = 1 with pi = 2/3 everywhere.
  const Matrix a = Matrix::from_rows({{1, 1, -0.5}});
  const std::vector<double> pi(3, 2.0 / 3.0);
  const int draws = 100000;
  std::vector<double> sum(3, 0.0), sum_sq(3, 0.0);
  for (int k = 0; k < draws; ++k) {
    RandomStream rng(static_cast<std::uint64_t>(k));
    FlightState s = start_flight(pi);
    const auto mv = propose_flight_move(a, s);
    REQUIRE(mv.has_value());
    apply_flight_move(s, *mv, rng.uniform() < mv->prob_up());
    for (std::size_t i = 0; i < 3; ++i) {
      sum[i] += s.pi_t[i];
      sum_sq[i] += s.pi_t[i] * s.pi_t[i];
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const double mean = sum[i] / draws;
    const double var = sum_sq[i] / draws - mean * mean;
    REQUIRE(std::abs(mean - pi[i]) <= 4.0 * std::sqrt(var / draws) + 1e-12);
  }
}

TEST_CASE("three-unit plane landing after units one and three are treated") {
  // s1 = s3 = 1 forces s2 = 1 - 1 + 1/2 = 1/2, which the landing must resolve.
  const auto c = single_row({1, 1, -0.5});
  const FlightState s = make_state({2.0 / 3, 2.0 / 3, 2.0 / 3}, {1.0, 0.5, 1.0});
  const auto dist = landing_distribution(s, c, Matrix::identity(1));
  REQUIRE(dist.units == std::vector<std::size_t>{1});
  REQUIRE(dist.completions.size() == 2);
  REQUIRE(dist.probabilities[0] == Approx(0.5));
  REQUIRE(dist.probabilities[1] == Approx(0.5));
}

TEST_CASE("single unresolved unit with target two thirds") {
  const auto c = single_row({1, 1, -0.5});
  const FlightState s = make_state({2.0 / 3, 2.0 / 3, 2.0 / 3}, {1.0, 2.0 / 3.0, 0.0});
  const auto dist = landing_distribution(s, c, Matrix::identity(1));
  REQUIRE(dist.completions == std::vector<std::uint32_t>{0, 1});
  REQUIRE(dist.probabilities[0] == Approx(1.0 / 3.0));
  REQUIRE(dist.probabilities[1] == Approx(2.0 / 3.0));
  const int draws = 60000;
  int treated = 0;
  for (int k = 0; k < draws; ++k) {
    RandomStream rng(static_cast<std::uint64_t>(k));
    const auto a = landing_lp(s, c, Matrix::identity(1), rng);
    REQUIRE(a.d[0] == 1);
    REQUIRE(a.d[2] == 0);
    REQUIRE(a.landing_units == 1);
    treated += a.d[1];
  }
  REQUIRE(std::abs(treated / static_cast<double>(draws) - 2.0 / 3.0) <= 4.0 * std::sqrt(2.0 / 9.0 / draws));
}

TEST_CASE("landing with nothing unresolved keeps the flight result") {
  const auto c = single_row({1, 1, 1, 1});
  const FlightState s = make_state({0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 1});
  RandomStream rng(5);
  const auto a = landing_lp(s, c, Matrix::identity(1), rng);
  REQUIRE(a.d == std::vector<int>{1, 0, 0, 1});
  REQUIRE(a.landing_units == 0);
}

TEST_CASE("two identical unresolved units land on antithetic completions") {
  // Z_1 = Z_2 = 0.5 (A = 1 at pi0 = 1/2). The distribution family is
  // p00 = p11 = t, p01 = p10 = 1/2 - t; a grid over t in [0, 1/2] finds the
  // minimum of the expected cost.
  const auto c = single_row({1, 1, 1});
  const FlightState s = make_state({0.5, 0.5, 0.5}, {0.5, 0.5, 1.0});
  const auto dist = landing_distribution(s, c, Matrix::identity(1));
  REQUIRE(dist.costs.size() == 4);
  double grid_best = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 500; ++k) {
    const double t = k * 1e-3;
    const double cost = t * dist.costs[0] + (0.5 - t) * dist.costs[1] + (0.5 - t) * dist.costs[2] + t * dist.costs[3];
    grid_best = std::min(grid_best, cost);
  }
  REQUIRE(dist.objective <= grid_best + 1e-12);
  REQUIRE(dist.objective == Approx(0.0).margin(1e-12));
  REQUIRE(dist.lp.x[0] == Approx(0.0).margin(1e-12));
  REQUIRE(dist.lp.x[3] == Approx(0.0).margin(1e-12));
  REQUIRE(dist.lp.x[1] == Approx(0.5));
  REQUIRE(dist.lp.x[2] == Approx(0.5));
}

TEST_CASE("landing refuses more units than the linear-programming limit") {
  const auto c = single_row(std::vector<double>(20, 1.0));
  const FlightState s = make_state(std::vector<double>(20, 0.5), std::vector<double>(20, 0.5));
  Tolerances tol;
  tol.lp_max_unresolved = 10;
  REQUIRE_THROWS_MATCHES(landing_distribution(s, c, Matrix::identity(1), tol), Error,
                         Catch::Matchers::Predicate<const Error&>([](const Error& e) { return has_code(e, ErrorCode::TooManyUnresolved); }));
}

TEST_CASE("suppression after dropping one constraint freezes more units") {
  RandomStream data(6);
  const std::size_t n = 30;
  const auto pi = spread_pi(n, data);
  const Matrix x = uniform_matrix(n, 4, data);
  const auto c = build_constraints(x, pi, {});
  RandomStream rng(7);
  const FlightState s = flight_phase(c.a, pi, rng);
  REQUIRE(s.unfrozen_count() > 0);
  std::vector<std::size_t> rows(c.rows() - 1);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  FlightState resumed = s;
  run_flight(c.a.select_rows(rows), resumed, rng);
  REQUIRE(resumed.unfrozen_count() < s.unfrozen_count());
}

TEST_CASE("suppression drop orders agree on the flight prefix") {
  RandomStream data(8);
  const std::size_t n = 40;
  const auto pi = spread_pi(n, data);
  const Matrix x = uniform_matrix(n, 6, data);
  const auto c = build_constraints(x, pi, {});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RandomStream rng(seed);
    const FlightState s = flight_phase(c.a, pi, rng);
    const auto reverse = default_drop_order(c.rows());
    std::vector<std::size_t> forward(c.rows());
    std::iota(forward.begin(), forward.end(), std::size_t{0});
    RandomStream r1(seed + 1000), r2(seed + 1000);
    const auto a1 = landing_suppression(s, c, reverse, r1);
    const auto a2 = landing_suppression(s, c, forward, r2);
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE((a1.d[i] == 0 || a1.d[i] == 1));
      REQUIRE((a2.d[i] == 0 || a2.d[i] == 1));
      if (s.frozen[i]) {
        REQUIRE(a1.d[i] == static_cast<int>(s.pi_t[i]));
        REQUIRE(a2.d[i] == static_cast<int>(s.pi_t[i]));
      }
    }
    REQUIRE(a1.landing_mode == "suppression");
    REQUIRE(a1.landing_units == s.unfrozen_count());
  }
}

TEST_CASE("suppression rejects a drop order that is not a permutation") {
  const auto c = single_row({1, 1, 1});
  const FlightState s = make_state({0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
  RandomStream rng(9);
  const std::vector<std::size_t> bad{1};
  REQUIRE_THROWS_MATCHES(landing_suppression(s, c, bad, rng), Error,
                         Catch::Matchers::Predicate<const Error&>([](const Error& e) { return has_code(e, ErrorCode::InvalidArgument); }));
}

TEST_CASE("many constraints land by suppression with correct marginals") {
  RandomStream data(10);
  const std::size_t n = 40, p = 25;
  const auto pi = spread_pi(n, data, 0.3, 0.7);
  const Matrix x = uniform_matrix(n, p, data);
  const int draws = 20000;
  std::vector<double> hits(n, 0.0);
  for (int k = 0; k < draws; ++k) {
    RandomStream rng(static_cast<std::uint64_t>(k));
    const auto out = cube_run(x, pi, {}, {}, rng);
    REQUIRE(out.constraints.rows() > default_tolerances.lp_max_unresolved);
    REQUIRE(out.assignment.landing_mode == "suppression");
    for (std::size_t i = 0; i < n; ++i) hits[i] += out.assignment.d[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    REQUIRE(std::abs(hits[i] / draws - pi[i]) <= 4.0 * std::sqrt(pi[i] * (1 - pi[i]) / draws));
}

TEST_CASE("fixed size specification treats exactly half") {
  RandomStream data(11);
  const std::size_t n = 50;
  const Matrix x(n, 0);
  const std::vector<double> pi(n, 0.5);
  BalanceSpec spec;
  spec.include_group_constants = false;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RandomStream rng(seed);
    const auto a = cube_assign(x, pi, spec, {}, rng);
    REQUIRE(a.treated() == n / 2);
    REQUIRE(a.landing_units == 0);
    REQUIRE(a.design_name == "cube");
  }
}

TEST_CASE("two units with fixed size are split evenly") {
  const Matrix x(2, 0);
  const std::vector<double> pi(2, 0.5);
  BalanceSpec spec;
  spec.include_group_constants = false;
  const int draws = 40000;
  int first = 0;
  for (int k = 0; k < draws; ++k) {
    RandomStream rng(static_cast<std::uint64_t>(k));
    const auto a = cube_assign(x, pi, spec, {}, rng);
    REQUIRE(a.d[0] + a.d[1] == 1);
    first += a.d[0];
  }
  REQUIRE(std::abs(first / static_cast<double>(draws) - 0.5) <= 4.0 * std::sqrt(0.25 / draws));
}

TEST_CASE("thirty covariates stay far inside the deterministic bound") {
  RandomStream data(12);
  const std::size_t n = 500, p = 30;
  const Matrix x = uniform_matrix(n, p, data);
  const std::vector<double> pi(n, 0.5);
  const double bound = cube_balance_bound(1.0, p + 1, pi);
  REQUIRE(bound == Approx(0.124));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomStream rng(seed);
    const auto a = cube_assign(x, pi, {}, {}, rng);
    const auto delta = compute_delta(x, a.d, pi);
    for (double v : delta) REQUIRE(std::abs(v) < bound);
  }
}

TEST_CASE("cube marginals with heterogeneous probabilities") {
  RandomStream data(13);
  const std::size_t n = 20;
  const auto pi = spread_pi(n, data, 0.15, 0.85);
  const Matrix x = uniform_matrix(n, 2, data);
  const int draws = 50000;
  std::vector<double> hits(n, 0.0);
  for (int k = 0; k < draws; ++k) {
    RandomStream rng(static_cast<std::uint64_t>(k));
    const auto a = cube_assign(x, pi, {}, {}, rng);
    for (std::size_t i = 0; i < n; ++i) hits[i] += a.d[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    REQUIRE(std::abs(hits[i] / draws - pi[i]) <= 4.0 * std::sqrt(pi[i] * (1 - pi[i]) / draws));
}

TEST_CASE("mean imbalance of the cube stays below its bound") {
  const std::size_t n = 100, reps = 1000;
  const std::vector<double> pi(n, 0.5);
  for (std::size_t p : {1, 5, 10}) {
    std::vector<double> v;
    for (std::size_t r = 0; r < reps; ++r) {
      RandomStream rng(1000 * p + r);
      const Matrix x = uniform_matrix(n, p, rng);
      v.push_back(compute_imbalance_norm(x, cube_assign(x, pi, {}, {}, rng).d, pi));
    }
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / reps;
    double ss = 0.0;
    for (double e : v) ss += (e - mean) * (e - mean);
    const double se = std::sqrt(ss / (reps - 1) / reps);
    const double bound = 4.0 * (p + 1.0) * (p + 1.0) / (n * static_cast<double>(n));
    REQUIRE(mean <= bound + 3.0 * se);
  }
}

TEST_CASE("exact group-constant balance makes the two weighted estimators agree") {
  // Six units at pi = 1/3 and six at pi = 2/3: exact balance needs two and
  // four treated units respectively.
  std::vector<double> pi(12);
  for (std::size_t i = 0; i < 12; ++i) pi[i] = i < 6 ? 1.0 / 3.0 : 2.0 / 3.0;
  RandomStream data(14);
  const Matrix x = uniform_matrix(12, 1, data);
  std::vector<double> y(12);
  for (auto& v : y) v = data.normal() * 5.0 + 3.0;
  BalanceSpec spec;
  spec.include_fixed_size = false;
  spec.moments = {MomentSet::First};
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    RandomStream rng(seed);
    const auto a = cube_assign(x, pi, spec, {}, rng);
    double t = 0.0, c = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
      t += a.d[i] / pi[i];
      c += (1 - a.d[i]) / (1 - pi[i]);
    }
    if (std::abs(t - 12.0) > 1e-9 || std::abs(c - 12.0) > 1e-9) continue;
    ++exact;
    REQUIRE(std::abs(hajek(y, a.d, pi) - horvitz_thompson(y, a.d, pi)) <= 1e-10);
  }
  REQUIRE(exact > 100);
}

TEST_CASE("inverse covariance cost is symmetric positive definite") {
  RandomStream data(15);
  const std::size_t n = 60;
  const auto pi = spread_pi(n, data);
  const Matrix x = uniform_matrix(n, 3, data);
  const auto c = build_constraints(x, pi, {});
  const Matrix m = inverse_covariance_cost(c, pi);
  REQUIRE_NOTHROW(validate_cost_matrix(m));
  LandingPolicy policy;
  policy.cost = CostKind::InverseCovariance;
  RandomStream rng(16);
  const auto a = cube_assign(x, pi, {}, policy, rng);
  REQUIRE(a.d.size() == n);
}

TEST_CASE("custom cost matrices are validated") {
  REQUIRE_THROWS_AS(validate_cost_matrix(Matrix::from_rows({{1, 2}, {0, 1}})), Error);
  REQUIRE_THROWS_AS(validate_cost_matrix(Matrix::from_rows({{1, 2}, {2, 1}})), Error);
  REQUIRE_NOTHROW(validate_cost_matrix(Matrix::from_rows({{2, 1}, {1, 2}})));
}

TEST_CASE("cube draws are reproducible from the seed") {
  RandomStream data(17);
  const Matrix x = uniform_matrix(80, 4, data);
  const auto pi = spread_pi(80, data);
  RandomStream a(99), b(99);
  REQUIRE(cube_assign(x, pi, {}, {}, a).d == cube_assign(x, pi, {}, {}, b).d);
}
