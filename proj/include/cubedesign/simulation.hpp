#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cubedesign/balance.hpp"
#include "cubedesign/cube.hpp"
#include "cubedesign/designs.hpp"
#include "cubedesign/error.hpp"
#include "cubedesign/estimators.hpp"
#include "cubedesign/parallel.hpp"
#include "cubedesign/random.hpp"

namespace cubedesign {

/// Y(0) = 1 + (X - 1/2)'b0 + e0 and
/// Y(1) = 1 + X'b1 + (X - 1/2)' A (X - 1/2) + e1 with
/// A = s (11' - I), X ~ U(0,1)^p and e ~ N(0, error_sd^2).
struct SimpleDgpConfig {
  std::size_t n = 500;
  std::size_t p = 30;
  /// Empty means (1, 0, ..., 0).
  std::vector<double> beta0;
  /// Empty means 2 * beta0.
  std::vector<double> beta1;
  double interaction_scale = 1.0 / 20.0;
  double error_sd = 1.0;
  std::uint64_t seed = 42;

  std::vector<double> resolved_beta0() const {
    if (!beta0.empty()) return beta0;
    std::vector<double> b(p, 0.0);
    if (p > 0) b[0] = 1.0;
    return b;
  }
  std::vector<double> resolved_beta1() const {
    if (!beta1.empty()) return beta1;
    auto b = resolved_beta0();
    for (double& v : b) v *= 2.0;
    return b;
  }
  void validate() const {
    detail::require(resolved_beta0().size() == p && resolved_beta1().size() == p, ErrorCode::DimensionMismatch,
                    "coefficient vectors must have length p = " + std::to_string(p));
    detail::require(error_sd >= 0.0, ErrorCode::InvalidArgument, "error_sd must be non-negative");
  }
};

struct DgpSample {
  Matrix x;
  std::vector<double> y1;
  std::vector<double> y0;
  double pate = 0.0;
};

/// PATE = sum(b1) / 2; the interaction has mean zero.
inline double true_pate(const SimpleDgpConfig& config) {
  const auto b1 = config.resolved_beta1();
  return std::accumulate(b1.begin(), b1.end(), 0.0) / 2.0;
}

/// E[(Z0'(b1 + b0))^2] at pi = 1/2: second moment of the sum of the linear
/// projections of Y(1) and Y(0) on (1, X).
inline double sigma0(const SimpleDgpConfig& config) {
  const auto b0 = config.resolved_beta0(), b1 = config.resolved_beta1();
  double sum_b0 = 0.0, sum_g = 0.0, sq_g = 0.0;
  for (std::size_t j = 0; j < config.p; ++j) {
    sum_b0 += b0[j];
    sum_g += b0[j] + b1[j];
    sq_g += (b0[j] + b1[j]) * (b0[j] + b1[j]);
  }
  const double mean = 2.0 - 0.5 * sum_b0 + 0.5 * sum_g;
  return mean * mean + sq_g / 12.0;
}

/// Var(Z1'b1 - Z0'b0) + E[e(1)^2 / pi] + E[e(0)^2 / (1 - pi)] at pi = 1/2,
/// where e(1) includes the interaction term.
inline double v0_star(const SimpleDgpConfig& config) {
  const auto b0 = config.resolved_beta0(), b1 = config.resolved_beta1();
  double diff = 0.0;
  for (std::size_t j = 0; j < config.p; ++j) diff += (b1[j] - b0[j]) * (b1[j] - b0[j]);
  const double s = config.interaction_scale;
  const double pp = static_cast<double>(config.p);
  const double interaction_var = s * s * 2.0 * pp * (pp - 1.0) / 144.0;
  const double e2 = config.error_sd * config.error_sd;
  return diff / 12.0 + 2.0 * (e2 + interaction_var) + 2.0 * e2;
}

inline DgpSample simple_dgp(const SimpleDgpConfig& config, RandomStream& rng) {
  config.validate();
  const std::size_t n = config.n, p = config.p;
  const auto b0 = config.resolved_beta0(), b1 = config.resolved_beta1();
  DgpSample out{Matrix(n, p), std::vector<double>(n), std::vector<double>(n), true_pate(config)};
  for (auto& v : out.x.data()) v = rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    double lin0 = 0.0, lin1 = 0.0, centered_sum = 0.0, centered_sq = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double xc = out.x(i, j) - 0.5;
      lin0 += xc * b0[j];
      lin1 += out.x(i, j) * b1[j];
      centered_sum += xc;
      centered_sq += xc * xc;
    }
    // (x - 1/2)' s (11' - I) (x - 1/2) = s ((sum xc)^2 - sum xc^2)
    const double interaction = config.interaction_scale * (centered_sum * centered_sum - centered_sq);
    const double e0 = config.error_sd * rng.normal();
    const double e1 = config.error_sd * rng.normal();
    out.y0[i] = 1.0 + lin0 + e0;
    out.y1[i] = 1.0 + lin1 + interaction + e1;
  }
  return out;
}

enum class DesignKind { CoinToss, CompleteRandomization, Stratified, MatchedPairs, Cube };

struct DesignChoice {
  DesignKind kind = DesignKind::Cube;
  /// Quantile cells per covariate for stratified designs.
  std::size_t ell = 2;

  std::string name() const {
    switch (kind) {
      case DesignKind::CoinToss: return "ct";
      case DesignKind::CompleteRandomization: return "cr";
      case DesignKind::Stratified: return "s" + std::to_string(ell);
      case DesignKind::MatchedPairs: return "mp";
      case DesignKind::Cube: return "cube";
    }
    return "unknown";
  }

  static DesignChoice parse(const std::string& name) {
    if (name == "ct") return {DesignKind::CoinToss};
    if (name == "cr") return {DesignKind::CompleteRandomization};
    if (name == "mp") return {DesignKind::MatchedPairs};
    if (name == "cube") return {DesignKind::Cube};
    if (name.size() > 1 && name[0] == 's') {
      try {
        std::size_t used = 0;
        const long ell = std::stol(name.substr(1), &used);
        if (used == name.size() - 1 && ell >= 2) return {DesignKind::Stratified, static_cast<std::size_t>(ell)};
      } catch (const std::exception&) {
      }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown design '" + name + "' (expected ct, cr, s<ell>, mp or cube)");
  }
};

/// Draws one assignment balancing the columns of `x`. pi must be 1/2 for
/// every design except coin toss and cube.
inline Assignment draw_design(const DesignChoice& design, const Matrix& x, std::span<const double> pi, RandomStream& rng,
                              const BalanceSpec& spec = {}, const LandingPolicy& policy = {}) {
  switch (design.kind) {
    case DesignKind::CoinToss: return coin_toss(pi, rng);
    case DesignKind::CompleteRandomization: return complete_randomization(x.rows(), x.rows() / 2, rng);
    case DesignKind::Stratified: {
      Assignment a = stratified_assign(stratify_by_quantiles(x, design.ell), rng);
      a.design_name = design.name();
      return a;
    }
    case DesignKind::MatchedPairs: return matched_pairs(x, rng);
    case DesignKind::Cube: return cube_assign(x, pi, spec, policy, rng);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown design");
}

struct ExperimentResult {
  std::string design_name;
  std::size_t p_used = 0;
  std::size_t replications = 0;
  double mean_imbalance = std::numeric_limits<double>::quiet_NaN();
  double imbalance_se = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double rmse_se = std::numeric_limits<double>::quiet_NaN();
  double bias = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double coverage_se = std::numeric_limits<double>::quiet_NaN();
  double power = std::numeric_limits<double>::quiet_NaN();
  double mean_variance_hat = std::numeric_limits<double>::quiet_NaN();
  double wall_time = 0.0;
};

/// One value per (design, p, replication).
struct ReplicationRecord {
  std::string design_name;
  std::size_t p_used = 0;
  std::size_t replication = 0;
  double value = 0.0;
};

struct ExperimentOutput {
  std::vector<ExperimentResult> summary;
  std::vector<ReplicationRecord> raw;
};

namespace detail {

inline Matrix leading(const Matrix& x, std::size_t p) { return p == x.cols() ? x : x.leading_columns(p); }

inline RandomStream cell_stream(const RandomStream& rep, const DesignChoice& design, std::size_t p) {
  return rep.substream(streams::design).substream(hash_tag(design.name()) ^ splitmix64(p));
}

struct MomentAccumulator {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  double mean() const { return sum / static_cast<double>(count); }
  double variance() const {
    if (count < 2) return 0.0;
    const double m = mean();
    return std::max(0.0, (sum_sq - static_cast<double>(count) * m * m) / static_cast<double>(count - 1));
  }
  double se() const { return std::sqrt(variance() / static_cast<double>(count)); }
};

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Mean squared imbalance norm per (design, p) with pi = 1/2 and uniform
/// covariates. Each replication draws one n x max(p_grid) covariate matrix
/// shared by all cells; design d with p covariates balances its first p
/// columns.
inline ExperimentOutput run_imbalance_experiment(std::size_t n, const std::vector<std::size_t>& p_grid,
                                                 const std::vector<DesignChoice>& designs, std::size_t replications,
                                                 std::uint64_t seed, std::size_t threads = 1) {
  detail::require(!p_grid.empty() && !designs.empty() && replications > 0, ErrorCode::InvalidArgument,
                  "imbalance experiment needs designs, a p grid and replications");
  const std::size_t p_max = *std::max_element(p_grid.begin(), p_grid.end());
  const auto start = std::chrono::steady_clock::now();
  const std::vector<double> pi(n, 0.5);
  const RandomStream master(seed);
  const std::size_t cells = designs.size() * p_grid.size();
  auto per_rep = parallel_map(replications, threads, [&](std::size_t r) {
    const RandomStream rep = master.substream(static_cast<std::uint64_t>(r));
    RandomStream dgp = rep.substream(streams::dgp);
    Matrix x(n, p_max);
    for (auto& v : x.data()) v = dgp.uniform();
    std::vector<double> values(cells);
    for (std::size_t di = 0; di < designs.size(); ++di)
      for (std::size_t pi_idx = 0; pi_idx < p_grid.size(); ++pi_idx) {
        const Matrix xp = detail::leading(x, p_grid[pi_idx]);
        RandomStream drng = detail::cell_stream(rep, designs[di], p_grid[pi_idx]);
        const Assignment a = draw_design(designs[di], xp, pi, drng);
        values[di * p_grid.size() + pi_idx] = compute_imbalance_norm(xp, a.d, pi);
      }
    return values;
  });
  ExperimentOutput out;
  for (std::size_t di = 0; di < designs.size(); ++di)
    for (std::size_t pi_idx = 0; pi_idx < p_grid.size(); ++pi_idx) {
      detail::MomentAccumulator acc;
      for (std::size_t r = 0; r < replications; ++r) {
        const double v = per_rep[r][di * p_grid.size() + pi_idx];
        acc.add(v);
        out.raw.push_back({designs[di].name(), p_grid[pi_idx], r, v});
      }
      ExperimentResult res;
      res.design_name = designs[di].name();
      res.p_used = p_grid[pi_idx];
      res.replications = replications;
      res.mean_imbalance = acc.mean();
      res.imbalance_se = acc.se();
      out.summary.push_back(res);
    }
  const double elapsed = detail::seconds_since(start);
  for (auto& res : out.summary) res.wall_time = elapsed;
  return out;
}

/// RMSE, bias and spread of the HT estimator against the analytic PATE of the
/// simple outcome model, per (design, p). Designs balance the first p of the
/// config.p generated covariates.
inline ExperimentOutput run_rmse_experiment(const SimpleDgpConfig& config, const std::vector<DesignChoice>& designs,
                                            const std::vector<std::size_t>& p_grid, std::size_t replications,
                                            std::size_t threads = 1) {
  config.validate();
  for (std::size_t p : p_grid)
    detail::require(p <= config.p, ErrorCode::InvalidArgument,
                    "cannot balance " + std::to_string(p) + " of " + std::to_string(config.p) + " covariates");
  detail::require(!p_grid.empty() && !designs.empty() && replications > 0, ErrorCode::InvalidArgument,
                  "rmse experiment needs designs, a p grid and replications");
  const auto start = std::chrono::steady_clock::now();
  const std::vector<double> pi(config.n, 0.5);
  const double theta = true_pate(config);
  const RandomStream master(config.seed);
  const std::size_t cells = designs.size() * p_grid.size();
  auto per_rep = parallel_map(replications, threads, [&](std::size_t r) {
    const RandomStream rep = master.substream(static_cast<std::uint64_t>(r));
    RandomStream dgp = rep.substream(streams::dgp);
    const DgpSample sample = simple_dgp(config, dgp);
    std::vector<double> errors(cells);
    std::vector<double> y(config.n);
    for (std::size_t di = 0; di < designs.size(); ++di)
      for (std::size_t pi_idx = 0; pi_idx < p_grid.size(); ++pi_idx) {
        const Matrix xp = detail::leading(sample.x, p_grid[pi_idx]);
        RandomStream drng = detail::cell_stream(rep, designs[di], p_grid[pi_idx]);
        const Assignment a = draw_design(designs[di], xp, pi, drng);
        for (std::size_t i = 0; i < config.n; ++i) y[i] = a.d[i] ? sample.y1[i] : sample.y0[i];
        errors[di * p_grid.size() + pi_idx] = horvitz_thompson(y, a.d, pi) - theta;
      }
    return errors;
  });
  ExperimentOutput out;
  for (std::size_t di = 0; di < designs.size(); ++di)
    for (std::size_t pi_idx = 0; pi_idx < p_grid.size(); ++pi_idx) {
      detail::MomentAccumulator err, sq;
      for (std::size_t r = 0; r < replications; ++r) {
        const double e = per_rep[r][di * p_grid.size() + pi_idx];
        err.add(e);
        sq.add(e * e);
        out.raw.push_back({designs[di].name(), p_grid[pi_idx], r, e + theta});
      }
      ExperimentResult res;
      res.design_name = designs[di].name();
      res.p_used = p_grid[pi_idx];
      res.replications = replications;
      res.bias = err.mean();
      res.sd = std::sqrt(err.variance());
      res.rmse = std::sqrt(sq.mean());
      res.rmse_se = res.rmse > 0.0 ? sq.se() / (2.0 * res.rmse) : 0.0;
      out.summary.push_back(res);
    }
  const double elapsed = detail::seconds_since(start);
  for (auto& res : out.summary) res.wall_time = elapsed;
  return out;
}

/// Coverage of the asymptotic interval for the cube design balancing the
/// first p_used covariates, and power of the level-alpha test of a zero
/// effect.
inline ExperimentOutput run_coverage_experiment(const SimpleDgpConfig& config, std::size_t p_used, std::size_t replications,
                                                double alpha, std::size_t threads = 1, const BalanceSpec& spec = {},
                                                const LandingPolicy& policy = {}) {
  config.validate();
  detail::require(p_used <= config.p, ErrorCode::InvalidArgument, "p_used exceeds the generated covariates");
  detail::require(replications > 0, ErrorCode::InvalidArgument, "coverage experiment needs replications");
  const auto start = std::chrono::steady_clock::now();
  const std::vector<double> pi(config.n, 0.5);
  const double theta = true_pate(config);
  const RandomStream master(config.seed);
  const DesignChoice cube{DesignKind::Cube};
  struct Rep {
    double estimate = 0.0, variance = 0.0;
    bool covers = false, rejects = false;
  };
  auto reps = parallel_map(replications, threads, [&](std::size_t r) {
    const RandomStream rep = master.substream(static_cast<std::uint64_t>(r));
    RandomStream dgp = rep.substream(streams::dgp);
    const DgpSample sample = simple_dgp(config, dgp);
    const Matrix xp = detail::leading(sample.x, p_used);
    RandomStream drng = detail::cell_stream(rep, cube, p_used);
    const Assignment a = draw_design(cube, xp, pi, drng, spec, policy);
    std::vector<double> y(config.n);
    for (std::size_t i = 0; i < config.n; ++i) y[i] = a.d[i] ? sample.y1[i] : sample.y0[i];
    const auto [z1, z0] = balancing_covariates(xp, pi);
    Rep out;
    out.estimate = horvitz_thompson(y, a.d, pi);
    out.variance = pate_variance(y, a.d, pi, z1, z0);
    const auto [lo, hi] = confidence_interval(out.estimate, out.variance, alpha);
    out.covers = lo <= theta && theta <= hi;
    out.rejects = lo > 0.0 || hi < 0.0;
    return out;
  });
  ExperimentOutput out;
  detail::MomentAccumulator err, sq, var;
  std::size_t covered = 0, rejected = 0;
  for (std::size_t r = 0; r < replications; ++r) {
    err.add(reps[r].estimate - theta);
    sq.add((reps[r].estimate - theta) * (reps[r].estimate - theta));
    var.add(reps[r].variance);
    covered += reps[r].covers;
    rejected += reps[r].rejects;
    out.raw.push_back({cube.name(), p_used, r, reps[r].estimate});
  }
  ExperimentResult res;
  res.design_name = cube.name();
  res.p_used = p_used;
  res.replications = replications;
  res.bias = err.mean();
  res.sd = std::sqrt(err.variance());
  res.rmse = std::sqrt(sq.mean());
  res.rmse_se = res.rmse > 0.0 ? sq.se() / (2.0 * res.rmse) : 0.0;
  res.coverage = static_cast<double>(covered) / static_cast<double>(replications);
  res.coverage_se = std::sqrt(res.coverage * (1.0 - res.coverage) / static_cast<double>(replications));
  res.power = static_cast<double>(rejected) / static_cast<double>(replications);
  res.mean_variance_hat = var.mean();
  res.wall_time = detail::seconds_since(start);
  out.summary.push_back(res);
  return out;
}

}  // namespace cubedesign
