#pragma once

#include <cstddef>

namespace cubedesign {

/// Numerical tolerances shared by every module. All defaults are pinned here
/// so tests can reference them directly.
struct Tolerances {
  /// Pivot magnitude below which a column counts as dependent, relative to
  /// max(1, largest absolute entry of the matrix being reduced).
  double pivot = 1e-10;
  /// Null-space residual bound: |A u|_inf <= null_residual * max(1, |A|_inf).
  double null_residual = 1e-9;
  /// Distance to 0 or 1 under which a flight-phase probability is frozen.
  double snap = 1e-9;
  /// Relative drift allowed on A * pi(t) during the flight phase.
  double conservation = 1e-7;
  /// Equality-constraint violation allowed in LP solutions.
  double lp_feasibility = 1e-8;
  /// Reduced-cost threshold for simplex optimality.
  double lp_optimality = 1e-11;
  /// Common-support margin c: every propensity must lie in [c, 1 - c].
  double propensity_margin = 0.01;
  /// Largest number of unresolved units handed to the landing LP.
  std::size_t lp_max_unresolved = 15;
  /// Ridge added to the second-moment matrix before inversion.
  double inverse_covariance_ridge = 1e-8;
};

inline constexpr Tolerances default_tolerances{};

}  // namespace cubedesign
