#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cubedesign/designs.hpp"
#include "cubedesign/error.hpp"
#include "cubedesign/matrix.hpp"
#include "cubedesign/numerics.hpp"

namespace cubedesign {

enum class EstimatorKind { HorvitzThompson, Hajek, StrataFixedEffects };

constexpr std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::HorvitzThompson: return "horvitz_thompson";
    case EstimatorKind::Hajek: return "hajek";
    case EstimatorKind::StrataFixedEffects: return "strata_fe";
  }
  return "unknown";
}

struct EstimateResult {
  double theta_hat = 0.0;
  double variance_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  EstimatorKind kind = EstimatorKind::HorvitzThompson;
  double alpha = 0.05;
};

namespace detail {

inline void check_outcome_inputs(std::span<const double> y, std::span<const int> d, std::span<const double> pi) {
  require(y.size() == d.size() && y.size() == pi.size(), ErrorCode::DimensionMismatch,
          "outcome, assignment and pi lengths differ (" + std::to_string(y.size()) + ", " + std::to_string(d.size()) + ", " +
              std::to_string(pi.size()) + ")");
  require(!y.empty(), ErrorCode::DimensionMismatch, "no units");
  check_open_probabilities(pi);
}

}  // namespace detail

/// (1/n) sum_i y_i D_i / pi_i - y_i (1 - D_i) / (1 - pi_i).
inline double horvitz_thompson(std::span<const double> y, std::span<const int> d, std::span<const double> pi) {
  detail::check_outcome_inputs(y, d, pi);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += d[i] ? y[i] / pi[i] : -y[i] / (1.0 - pi[i]);
  return s / static_cast<double>(y.size());
}

/// Difference of inverse-probability weighted group means.
inline double hajek(std::span<const double> y, std::span<const int> d, std::span<const double> pi) {
  detail::check_outcome_inputs(y, d, pi);
  double num1 = 0.0, den1 = 0.0, num0 = 0.0, den0 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (d[i]) {
      num1 += y[i] / pi[i];
      den1 += 1.0 / pi[i];
    } else {
      num0 += y[i] / (1.0 - pi[i]);
      den0 += 1.0 / (1.0 - pi[i]);
    }
  }
  if (den1 == 0.0 || den0 == 0.0) throw Error(ErrorCode::EmptyGroup, den1 == 0.0 ? "no treated units" : "no control units");
  return num1 / den1 - num0 / den0;
}

struct StrataFeResult {
  double theta_hat = 0.0;
  /// Strata without both a treated and a control unit, left out of the fit.
  std::size_t dropped_strata = 0;
  std::size_t units_used = 0;
};

/// Treatment coefficient from OLS of y on D and stratum indicators.
inline StrataFeResult strata_fe_estimate(std::span<const double> y, std::span<const int> d, const StrataPartition& partition) {
  detail::require(y.size() == d.size() && y.size() == partition.labels.size(), ErrorCode::DimensionMismatch,
                  "outcome, assignment and strata lengths differ");
  const auto members = partition.members();
  std::vector<std::size_t> column_of(partition.stratum_count, 0);
  std::vector<std::size_t> units;
  StrataFeResult out;
  std::size_t identified = 0;
  for (std::size_t s = 0; s < members.size(); ++s) {
    std::size_t treated = 0;
    for (std::size_t i : members[s]) treated += d[i] ? 1 : 0;
    if (treated == 0 || treated == members[s].size()) {
      out.dropped_strata += members[s].empty() ? 0 : 1;
      continue;
    }
    column_of[s] = 1 + identified++;
    units.insert(units.end(), members[s].begin(), members[s].end());
  }
  if (identified == 0) throw Error(ErrorCode::NoIdentifiedStrata, "no stratum contains both treated and control units");
  Matrix design(units.size(), 1 + identified);
  std::vector<double> yy(units.size());
  for (std::size_t k = 0; k < units.size(); ++k) {
    const std::size_t i = units[k];
    design(k, 0) = d[i];
    design(k, column_of[partition.labels[i]]) = 1.0;
    yy[k] = y[i];
  }
  out.theta_hat = solve_ols(design, yy)[0];
  out.units_used = units.size();
  return out;
}

/// Regressors used by the variance estimator: Z1 = (1, pi/(1-pi), pi, X/(1-pi))
/// and Z0 = ((1-pi)/pi) Z1, one row per unit.
inline std::pair<Matrix, Matrix> balancing_covariates(const Matrix& x, std::span<const double> pi) {
  detail::require(pi.size() == x.rows(), ErrorCode::DimensionMismatch, "covariates and pi lengths differ");
  const std::size_t n = x.rows(), k = 3 + x.cols();
  Matrix z1(n, k), z0(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pi[i];
    z1(i, 0) = 1.0;
    z1(i, 1) = p / (1.0 - p);
    z1(i, 2) = p;
    for (std::size_t j = 0; j < x.cols(); ++j) z1(i, 3 + j) = x(i, j) / (1.0 - p);
    for (std::size_t j = 0; j < k; ++j) z0(i, j) = z1(i, j) * (1.0 - p) / p;
  }
  return {std::move(z1), std::move(z0)};
}

/// Estimated variance of the HT estimator for the PATE:
/// (1/n)[S^2(Z1 b1 - Z0 b0) + (1/n) sum e1^2 D / pi^2 + (1/n) sum e0^2 (1 - D) / (1 - pi)^2]
/// with b1, b0 from OLS within each arm and S^2 the sample variance over all
/// units (divisor n - 1).
inline double pate_variance(std::span<const double> y, std::span<const int> d, std::span<const double> pi, const Matrix& z1,
                            const Matrix& z0) {
  detail::check_outcome_inputs(y, d, pi);
  const std::size_t n = y.size();
  detail::require(z1.rows() == n && z0.rows() == n, ErrorCode::DimensionMismatch, "regressor matrices must have one row per unit");
  std::vector<std::size_t> treated, control;
  for (std::size_t i = 0; i < n; ++i) (d[i] ? treated : control).push_back(i);
  if (treated.size() < z1.cols() || control.size() < z0.cols())
    throw Error(ErrorCode::InsufficientData, std::to_string(treated.size()) + " treated and " + std::to_string(control.size()) +
                                                 " control units cannot fit " + std::to_string(z1.cols()) + " and " +
                                                 std::to_string(z0.cols()) + " regressors");
  auto fit = [&](const Matrix& z, const std::vector<std::size_t>& rows) {
    std::vector<double> yy(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) yy[k] = y[rows[k]];
    return solve_ols(z.select_rows(rows), yy);
  };
  const auto b1 = fit(z1, treated);
  const auto b0 = fit(z0, control);
  const auto f1 = multiply(z1, b1);
  const auto f0 = multiply(z0, b0);

  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += f1[i] - f0[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (f1[i] - f0[i] - mean) * (f1[i] - f0[i] - mean);
  const double var_fit = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;

  double resid = 0.0;
  for (std::size_t i : treated) resid += (y[i] - f1[i]) * (y[i] - f1[i]) / (pi[i] * pi[i]);
  for (std::size_t i : control) resid += (y[i] - f0[i]) * (y[i] - f0[i]) / ((1.0 - pi[i]) * (1.0 - pi[i]));
  return (var_fit + resid / static_cast<double>(n)) / static_cast<double>(n);
}

/// theta_hat -/+ Phi^{-1}(1 - alpha/2) sqrt(variance_hat).
inline std::pair<double, double> confidence_interval(double theta_hat, double variance_hat, double alpha) {
  if (!(variance_hat >= 0.0)) throw Error(ErrorCode::DomainError, "variance estimate must be non-negative");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::DomainError, "alpha must lie in (0, 1)");
  const double half = normal_quantile(1.0 - alpha / 2.0) * std::sqrt(variance_hat);
  return {theta_hat - half, theta_hat + half};
}

inline EstimateResult make_estimate(EstimatorKind kind, double theta_hat, double variance_hat, double alpha) {
  const auto [lo, hi] = confidence_interval(theta_hat, variance_hat, alpha);
  return {theta_hat, variance_hat, lo, hi, kind, alpha};
}

}  // namespace cubedesign
