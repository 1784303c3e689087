#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cubedesign/cube.hpp"
#include "cubedesign/error.hpp"
#include "cubedesign/estimators.hpp"
#include "cubedesign/parallel.hpp"
#include "cubedesign/random.hpp"

namespace cubedesign {

enum class TestStatistic { AbsHorvitzThompson, AbsHajek };

using StatisticFn = std::function<double(std::span<const double> y, std::span<const int> d, std::span<const double> pi)>;

inline StatisticFn statistic_function(TestStatistic kind) {
  if (kind == TestStatistic::AbsHajek)
    return [](std::span<const double> y, std::span<const int> d, std::span<const double> pi) { return std::abs(hajek(y, d, pi)); };
  return [](std::span<const double> y, std::span<const int> d, std::span<const double> pi) {
    return std::abs(horvitz_thompson(y, d, pi));
  };
}

struct RandomizationTestResult {
  double statistic_observed = 0.0;
  /// Statistics of the B - 1 re-drawn assignments, sorted ascending.
  std::vector<double> statistics_resampled;
  double p_value = 1.0;
  std::size_t B = 0;
};

/// Fisher randomization test under the sharp null of no effect. Draws B - 1
/// fresh cube assignments with the same covariates, probabilities and
/// settings, holds y fixed, and returns
/// p = (1 + #{resampled >= observed}) / B.
/// Re-draw b uses the substream b of the "inference" substream of `rng`, so
/// the result does not depend on `threads`.
inline RandomizationTestResult randomization_test(std::span<const double> y, std::span<const int> d, const Matrix& x,
                                                  std::span<const double> pi, const BalanceSpec& spec, const LandingPolicy& policy,
                                                  std::size_t B, const StatisticFn& statistic, const RandomStream& rng,
                                                  std::size_t threads = 1, const Tolerances& tol = default_tolerances) {
  detail::require(B >= 20, ErrorCode::InvalidArgument, "randomization test needs B >= 20, got " + std::to_string(B));
  detail::require(y.size() == x.rows() && d.size() == x.rows() && pi.size() == x.rows(), ErrorCode::DimensionMismatch,
                  "outcome, assignment, covariates and pi must describe the same units");
  RandomizationTestResult out;
  out.B = B;
  out.statistic_observed = statistic(y, d, pi);
  const RandomStream base = rng.substream(streams::inference);
  out.statistics_resampled = parallel_map(B - 1, threads, [&](std::size_t b) {
    RandomStream draw = base.substream(static_cast<std::uint64_t>(b));
    const Assignment g = cube_assign(x, pi, spec, policy, draw, tol);
    return statistic(y, g.d, pi);
  });
  std::sort(out.statistics_resampled.begin(), out.statistics_resampled.end());
  const auto first_ge = std::lower_bound(out.statistics_resampled.begin(), out.statistics_resampled.end(), out.statistic_observed);
  const auto exceed = static_cast<std::size_t>(out.statistics_resampled.end() - first_ge);
  out.p_value = static_cast<double>(1 + exceed) / static_cast<double>(B);
  return out;
}

inline RandomizationTestResult randomization_test(std::span<const double> y, std::span<const int> d, const Matrix& x,
                                                  std::span<const double> pi, const BalanceSpec& spec, const LandingPolicy& policy,
                                                  std::size_t B, TestStatistic statistic, const RandomStream& rng,
                                                  std::size_t threads = 1, const Tolerances& tol = default_tolerances) {
  return randomization_test(y, d, x, pi, spec, policy, B, statistic_function(statistic), rng, threads, tol);
}

}  // namespace cubedesign
