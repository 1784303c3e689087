#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <tuple>
#include <span>
#include <string>
#include <vector>

#include "cubedesign/designs.hpp"
#include "cubedesign/error.hpp"
#include "cubedesign/matrix.hpp"
#include "cubedesign/numerics.hpp"

namespace cubedesign {

struct BalanceReport {
  std::vector<double> delta;
  std::vector<double> t_stats;
  std::vector<double> p_values;
  /// Squared imbalance norm; only defined when every pi equals 1/2.
  std::optional<double> b_norm_sq;
};

namespace detail {

inline void check_balance_inputs(const Matrix& x, std::span<const int> d, std::span<const double> pi) {
  require(d.size() == x.rows() && pi.size() == x.rows(), ErrorCode::DimensionMismatch,
          "covariates, assignment and pi must have the same number of units (" + std::to_string(x.rows()) + ", " +
              std::to_string(d.size()) + ", " + std::to_string(pi.size()) + ")");
}

inline double ipw_term(double x, int d, double pi) { return d ? x / pi : -x / (1.0 - pi); }

}  // namespace detail

/// Delta_j = (1/n) sum_i X_ji D_i / pi_i - X_ji (1 - D_i) / (1 - pi_i).
inline std::vector<double> compute_delta(const Matrix& x, std::span<const int> d, std::span<const double> pi) {
  detail::check_balance_inputs(x, d, pi);
  const std::size_t n = x.rows();
  std::vector<double> delta(x.cols(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) delta[j] += detail::ipw_term(x(i, j), d[i], pi[i]);
  for (double& v : delta) v /= static_cast<double>(n);
  return delta;
}

/// Squared norm of B = (2/n) sum_i X_i (2 D_i - 1). Defined for pi = 1/2 only.
inline double compute_imbalance_norm(const Matrix& x, std::span<const int> d, std::span<const double> pi) {
  detail::check_balance_inputs(x, d, pi);
  for (std::size_t i = 0; i < pi.size(); ++i)
    if (pi[i] != 0.5)
      throw Error(ErrorCode::HeterogeneousPi, "imbalance norm requires pi = 1/2; unit " + std::to_string(i) + " has " + std::to_string(pi[i]));
  const std::size_t n = x.rows();
  double total = 0.0;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double b = 0.0;
    for (std::size_t i = 0; i < n; ++i) b += x(i, j) * (2.0 * d[i] - 1.0);
    b *= 2.0 / static_cast<double>(n);
    total += b * b;
  }
  return total;
}

/// Balance t-statistics sqrt(n) Delta_j / s_j where s_j is the sample standard
/// deviation of the per-unit terms, with two-sided normal p-values. A zero
/// variance with zero Delta gives t = 0, p = 1.
inline std::pair<std::vector<double>, std::vector<double>> balance_tests(const Matrix& x, std::span<const int> d,
                                                                         std::span<const double> pi) {
  const auto delta = compute_delta(x, d, pi);
  const std::size_t n = x.rows();
  std::vector<double> t(x.cols()), p(x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = detail::ipw_term(x(i, j), d[i], pi[i]) - delta[j];
      ss += e * e;
    }
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    const double scale = 1e-12 * (1.0 + std::abs(delta[j]));
    if (sd <= scale && std::abs(delta[j]) <= scale) {
      t[j] = 0.0;
      p[j] = 1.0;
    } else if (sd <= scale) {
      t[j] = std::copysign(std::numeric_limits<double>::infinity(), delta[j]);
      p[j] = 0.0;
    } else {
      t[j] = std::sqrt(static_cast<double>(n)) * delta[j] / sd;
      p[j] = std::erfc(std::abs(t[j]) / std::numbers::sqrt2);
    }
  }
  return {std::move(t), std::move(p)};
}

inline BalanceReport balance_report(const Matrix& x, std::span<const int> d, std::span<const double> pi) {
  BalanceReport out;
  out.delta = compute_delta(x, d, pi);
  std::tie(out.t_stats, out.p_values) = balance_tests(x, d, pi);
  bool homogeneous = true;
  for (double v : pi) homogeneous = homogeneous && v == 0.5;
  if (homogeneous) out.b_norm_sq = compute_imbalance_norm(x, d, pi);
  return out;
}

}  // namespace cubedesign
