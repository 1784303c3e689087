#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cubedesign/config.hpp"
#include "cubedesign/designs.hpp"
#include "cubedesign/error.hpp"
#include "cubedesign/matrix.hpp"
#include "cubedesign/numerics.hpp"
#include "cubedesign/random.hpp"

namespace cubedesign {

enum class MomentSet { First, FirstAndSecond };

struct BalanceSpec {
  /// Balance sum_i pi_i D_i / pi_i, i.e. fix the number of treated units.
  bool include_fixed_size = true;
  /// Balance the constant and pi/(1-pi), which equalizes the weighted group
  /// sizes in both arms.
  bool include_group_constants = true;
  /// One entry per covariate. An empty list means first moments of every
  /// column.
  std::vector<MomentSet> moments;
};

struct ConstraintMatrix {
  /// q x n, column i equal to Z_i / pi_i.
  Matrix a;
  /// One label per kept row.
  std::vector<std::string> labels;
  /// Labels of candidate rows removed as linearly dependent on earlier rows.
  std::vector<std::string> dropped;
  std::size_t candidate_rows = 0;

  std::size_t rows() const noexcept { return a.rows(); }
};

namespace detail {

inline void check_propensities(std::span<const double> pi, const Tolerances& tol) {
  const double c = tol.propensity_margin;
  for (std::size_t i = 0; i < pi.size(); ++i)
    if (!(pi[i] >= c && pi[i] <= 1.0 - c))
      throw Error(ErrorCode::PropensityOutOfRange,
                  "unit " + std::to_string(i) + " has pi = " + std::to_string(pi[i]) + "; assignment probabilities must lie in [" +
                      std::to_string(c) + ", " + std::to_string(1.0 - c) + "]");
}

}  // namespace detail

/// Builds the balancing constraints. Candidate rows, in order: the constant
/// and pi/(1-pi) (group constants), pi (fixed size), then X_j/(1-pi) and
/// optionally X_j^2/(1-pi) for each covariate. Each row is divided by pi.
/// Rows in the span of earlier rows are dropped.
inline ConstraintMatrix build_constraints(const Matrix& x, std::span<const double> pi, const BalanceSpec& spec,
                                          const Tolerances& tol = default_tolerances) {
  const std::size_t n = x.rows(), p = x.cols();
  detail::require(pi.size() == n, ErrorCode::DimensionMismatch,
                  "covariates have " + std::to_string(n) + " rows but pi has " + std::to_string(pi.size()) + " entries");
  detail::require(spec.moments.empty() || spec.moments.size() == p, ErrorCode::DimensionMismatch,
                  "moment list has " + std::to_string(spec.moments.size()) + " entries for " + std::to_string(p) + " covariates");
  detail::check_propensities(pi, tol);

  std::vector<std::vector<double>> candidates;
  std::vector<std::string> names;
  auto add = [&](std::string name, auto&& z_of) {
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) row[i] = z_of(i) / pi[i];
    candidates.push_back(std::move(row));
    names.push_back(std::move(name));
  };
  if (spec.include_group_constants) {
    add("1", [](std::size_t) { return 1.0; });
    add("pi/(1-pi)", [&](std::size_t i) { return pi[i] / (1.0 - pi[i]); });
  }
  if (spec.include_fixed_size) add("pi", [&](std::size_t i) { return pi[i]; });
  for (std::size_t j = 0; j < p; ++j) {
    const std::string name = "x" + std::to_string(j + 1);
    add(name, [&](std::size_t i) { return x(i, j) / (1.0 - pi[i]); });
    if (!spec.moments.empty() && spec.moments[j] == MomentSet::FirstAndSecond)
      add(name + "^2", [&](std::size_t i) { return x(i, j) * x(i, j) / (1.0 - pi[i]); });
  }

  // Modified Gram-Schmidt rank filter.
  ConstraintMatrix out;
  out.candidate_rows = candidates.size();
  std::vector<std::vector<double>> basis;
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < candidates.size(); ++r) {
    std::vector<double> v = candidates[r];
    const double norm0 = std::sqrt(dot(v, v));
    for (const auto& b : basis) {
      const double c = dot(v, b);
      for (std::size_t i = 0; i < n; ++i) v[i] -= c * b[i];
    }
    const double norm = std::sqrt(dot(v, v));
    if (norm0 > 0.0 && norm > tol.pivot * norm0) {
      for (double& e : v) e /= norm;
      basis.push_back(std::move(v));
      kept.push_back(r);
    } else {
      out.dropped.push_back(names[r]);
    }
  }
  out.a = Matrix(kept.size(), n);
  for (std::size_t k = 0; k < kept.size(); ++k) {
    std::copy(candidates[kept[k]].begin(), candidates[kept[k]].end(), out.a.row(k).begin());
    out.labels.push_back(names[kept[k]]);
  }
  return out;
}

struct FlightState {
  std::vector<double> pi0;
  std::vector<double> pi_t;
  std::vector<char> frozen;
  std::size_t steps_taken = 0;

  std::vector<std::size_t> unfrozen() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < frozen.size(); ++i)
      if (!frozen[i]) out.push_back(i);
    return out;
  }
  std::size_t unfrozen_count() const {
    return static_cast<std::size_t>(std::count(frozen.begin(), frozen.end(), char{0}));
  }
};

/// One candidate step of the flight phase: pi(t) moves to pi + step_up * u or
/// to pi - step_down * u on the `active` coordinates.
struct FlightMove {
  std::vector<std::size_t> active;
  std::vector<double> direction;
  double step_up = 0.0;
  double step_down = 0.0;
  std::size_t hit_up = 0;
  std::size_t hit_down = 0;

  /// Probability of the upward move, chosen so that the step has mean zero.
  double prob_up() const { return step_down / (step_up + step_down); }
};

namespace detail {

inline void snap_and_freeze(FlightState& s, std::size_t i, const Tolerances& tol) {
  double& v = s.pi_t[i];
  if (v <= tol.snap) {
    v = 0.0;
    s.frozen[i] = 1;
  } else if (v >= 1.0 - tol.snap) {
    v = 1.0;
    s.frozen[i] = 1;
  }
}

}  // namespace detail

inline FlightState start_flight(std::span<const double> pi0, const Tolerances& tol = default_tolerances) {
  detail::check_open_probabilities(pi0);
  FlightState s{std::vector<double>(pi0.begin(), pi0.end()), std::vector<double>(pi0.begin(), pi0.end()),
                std::vector<char>(pi0.size(), 0), 0};
  for (std::size_t i = 0; i < pi0.size(); ++i) detail::snap_and_freeze(s, i, tol);
  return s;
}

/// Kernel direction on the first q+1 unfrozen units, or nullopt when the
/// flight phase is over.
inline std::optional<FlightMove> propose_flight_move(const Matrix& a, const FlightState& s,
                                                     const Tolerances& tol = default_tolerances) {
  const std::size_t want = a.rows() + 1;
  FlightMove mv;
  for (std::size_t i = 0; i < s.frozen.size() && mv.active.size() < want; ++i)
    if (!s.frozen[i]) mv.active.push_back(i);
  if (mv.active.empty()) return std::nullopt;
  auto u = try_null_space_vector(a.select_columns(mv.active), tol);
  if (!u) return std::nullopt;
  mv.direction = std::move(*u);
  mv.step_up = mv.step_down = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < mv.active.size(); ++k) {
    const double uk = mv.direction[k];
    const double pk = s.pi_t[mv.active[k]];
    if (uk == 0.0) continue;
    const double up = uk > 0.0 ? (1.0 - pk) / uk : pk / -uk;
    const double down = uk > 0.0 ? pk / uk : (1.0 - pk) / -uk;
    if (up < mv.step_up) {
      mv.step_up = up;
      mv.hit_up = k;
    }
    if (down < mv.step_down) {
      mv.step_down = down;
      mv.hit_down = k;
    }
  }
  return mv;
}

inline void apply_flight_move(FlightState& s, const FlightMove& mv, bool up, const Tolerances& tol = default_tolerances) {
  const double lambda = up ? mv.step_up : -mv.step_down;
  for (std::size_t k = 0; k < mv.active.size(); ++k) {
    const std::size_t i = mv.active[k];
    s.pi_t[i] = std::clamp(s.pi_t[i] + lambda * mv.direction[k], 0.0, 1.0);
  }
  // The coordinate that defined the step length lands exactly on its face.
  const std::size_t hit = up ? mv.hit_up : mv.hit_down;
  const bool toward_one = (mv.direction[hit] > 0.0) == up;
  s.pi_t[mv.active[hit]] = toward_one ? 1.0 : 0.0;
  for (std::size_t i : mv.active) detail::snap_and_freeze(s, i, tol);
  ++s.steps_taken;
}

/// Runs flight steps until the active submatrix has no kernel.
inline void run_flight(const Matrix& a, FlightState& s, RandomStream& rng, const Tolerances& tol = default_tolerances) {
  std::size_t stalled = 0;
  for (;;) {
    const auto mv = propose_flight_move(a, s, tol);
    if (!mv) return;
    const std::size_t before = s.unfrozen_count();
    apply_flight_move(s, *mv, rng.uniform() < mv->prob_up(), tol);
    stalled = s.unfrozen_count() < before ? 0 : stalled + 1;
    if (stalled > a.rows() + 1)
      throw Error(ErrorCode::NumericalBreakdown,
                  "flight phase made " + std::to_string(stalled) + " consecutive steps without freezing a unit");
  }
}

inline FlightState flight_phase(const Matrix& a, std::span<const double> pi0, RandomStream& rng,
                                const Tolerances& tol = default_tolerances) {
  detail::require(a.cols() == pi0.size(), ErrorCode::DimensionMismatch, "constraint matrix columns must match pi");
  FlightState s = start_flight(pi0, tol);
  run_flight(a, s, rng, tol);
  return s;
}

enum class CostKind { Identity, InverseCovariance, Custom };

/// Checks that m is symmetric positive definite by symmetric elimination.
inline void validate_cost_matrix(const Matrix& m) {
  detail::require(m.rows() == m.cols(), ErrorCode::DimensionMismatch, "cost matrix must be square");
  const std::size_t q = m.rows();
  const double scale = std::max(1.0, m.max_abs());
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = i + 1; j < q; ++j)
      detail::require(std::abs(m(i, j) - m(j, i)) <= 1e-12 * scale, ErrorCode::InvalidArgument, "cost matrix must be symmetric");
  Matrix w = m;
  for (std::size_t k = 0; k < q; ++k) {
    detail::require(w(k, k) > 1e-14 * scale, ErrorCode::InvalidArgument, "cost matrix must be positive definite");
    for (std::size_t i = k + 1; i < q; ++i) {
      const double f = w(i, k) / w(k, k);
      for (std::size_t j = k; j < q; ++j) w(i, j) -= f * w(k, j);
    }
  }
}

/// Inverse of the second-moment matrix (1/n) sum Z_i Z_i' with Z_i = A_i pi_i.
/// A ridge proportional to the mean diagonal is added when the matrix is
/// numerically singular.
inline Matrix inverse_covariance_cost(const ConstraintMatrix& c, std::span<const double> pi,
                                      const Tolerances& tol = default_tolerances) {
  const std::size_t q = c.rows(), n = c.a.cols();
  Matrix s(q, q);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < q; ++a)
      for (std::size_t b = 0; b < q; ++b) s(a, b) += c.a(a, i) * pi[i] * c.a(b, i) * pi[i] / static_cast<double>(n);
  auto invert = [q](const Matrix& m, double pivot) -> std::optional<Matrix> {
    Matrix aug(q, 2 * q);
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < q; ++j) aug(i, j) = m(i, j);
      aug(i, q + i) = 1.0;
    }
    const RowEchelon r = reduce_row_echelon(std::move(aug), pivot);
    if (r.rank() < q || (q > 0 && r.pivot_columns[q - 1] != q - 1)) return std::nullopt;
    Matrix inv(q, q);
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t j = 0; j < q; ++j) inv(i, j) = r.reduced(i, q + j);
    return inv;
  };
  if (auto inv = invert(s, tol.pivot)) return *inv;
  double trace = 0.0;
  for (std::size_t i = 0; i < q; ++i) trace += s(i, i);
  const double ridge = tol.inverse_covariance_ridge * std::max(1.0, trace / static_cast<double>(std::max<std::size_t>(q, 1)));
  for (std::size_t i = 0; i < q; ++i) s(i, i) += ridge;
  if (auto inv = invert(s, tol.pivot * 1e-3)) return *inv;
  throw Error(ErrorCode::NumericalBreakdown, "second-moment matrix of the constraints cannot be inverted");
}

/// Optimal distribution over completions of the unresolved units.
struct LandingDistribution {
  std::vector<std::size_t> units;
  /// Completion k sets units[b] to bit b of completions[k].
  std::vector<std::uint32_t> completions;
  std::vector<double> probabilities;
  /// Cost of every one of the 2^r completions, indexed by bit pattern.
  std::vector<double> costs;
  double objective = 0.0;
  LpSolution lp;
};

inline LandingDistribution landing_distribution(const FlightState& s, const ConstraintMatrix& c, const Matrix& m,
                                                const Tolerances& tol = default_tolerances) {
  const std::size_t q = c.rows();
  detail::require(m.rows() == q && m.cols() == q, ErrorCode::DimensionMismatch,
                  "cost matrix must be " + std::to_string(q) + " x " + std::to_string(q));
  LandingDistribution out;
  out.units = s.unfrozen();
  const std::size_t r = out.units.size();
  if (r > tol.lp_max_unresolved)
    throw Error(ErrorCode::TooManyUnresolved, std::to_string(r) + " unresolved units exceed the linear-programming limit of " +
                                                  std::to_string(tol.lp_max_unresolved));
  if (r == 0) return out;

  // z[b] = Z_i for unit b; base = -sum_b Z_b pi*_b.
  std::vector<std::vector<double>> z(r, std::vector<double>(q));
  std::vector<double> base(q, 0.0);
  for (std::size_t b = 0; b < r; ++b) {
    const std::size_t i = out.units[b];
    for (std::size_t k = 0; k < q; ++k) {
      z[b][k] = c.a(k, i) * s.pi0[i];
      base[k] -= z[b][k] * s.pi_t[i];
    }
  }
  const std::size_t count = std::size_t{1} << r;
  out.costs.resize(count);
  std::vector<double> v(q), mv(q);
  for (std::size_t a = 0; a < count; ++a) {
    v = base;
    for (std::size_t b = 0; b < r; ++b)
      if (a & (std::size_t{1} << b))
        for (std::size_t k = 0; k < q; ++k) v[k] += z[b][k];
    double cost = 0.0;
    for (std::size_t k = 0; k < q; ++k) {
      double row = 0.0;
      for (std::size_t l = 0; l < q; ++l) row += m(k, l) * v[l];
      cost += v[k] * row;
    }
    out.costs[a] = cost;
  }

  LpProblem lp{out.costs, Matrix(r + 1, count), std::vector<double>(r + 1)};
  lp.eq_rhs[0] = 1.0;
  for (std::size_t a = 0; a < count; ++a) {
    lp.eq_constraints(0, a) = 1.0;
    for (std::size_t b = 0; b < r; ++b)
      if (a & (std::size_t{1} << b)) lp.eq_constraints(b + 1, a) = 1.0;
  }
  for (std::size_t b = 0; b < r; ++b) lp.eq_rhs[b + 1] = s.pi_t[out.units[b]];
  out.lp = solve_lp(lp, tol);
  double total = 0.0;
  for (std::size_t a = 0; a < count; ++a)
    if (out.lp.x[a] > 0.0) {
      out.completions.push_back(static_cast<std::uint32_t>(a));
      out.probabilities.push_back(out.lp.x[a]);
      total += out.lp.x[a];
    }
  for (double& p : out.probabilities) p /= total;
  out.objective = out.lp.objective;
  return out;
}

namespace detail {

inline Assignment frozen_assignment(const FlightState& s) {
  Assignment out;
  out.d.resize(s.pi_t.size());
  for (std::size_t i = 0; i < s.pi_t.size(); ++i) out.d[i] = s.pi_t[i] >= 0.5 ? 1 : 0;
  return out;
}

}  // namespace detail

inline Assignment landing_lp(const FlightState& s, const ConstraintMatrix& c, const Matrix& m, RandomStream& rng,
                             const Tolerances& tol = default_tolerances) {
  const LandingDistribution dist = landing_distribution(s, c, m, tol);
  Assignment out = detail::frozen_assignment(s);
  out.landing_units = dist.units.size();
  out.landing_mode = "lp";
  if (dist.units.empty()) return out;
  const double u = rng.uniform();
  std::size_t pick = dist.completions.size() - 1;
  double acc = 0.0;
  for (std::size_t k = 0; k < dist.completions.size(); ++k) {
    acc += dist.probabilities[k];
    if (u < acc) {
      pick = k;
      break;
    }
  }
  for (std::size_t b = 0; b < dist.units.size(); ++b) out.d[dist.units[b]] = (dist.completions[pick] >> b) & 1U;
  return out;
}

/// Default suppression order: last constructed row first.
inline std::vector<std::size_t> default_drop_order(std::size_t q) {
  std::vector<std::size_t> order(q);
  std::iota(order.rbegin(), order.rend(), std::size_t{0});
  return order;
}

/// Drops constraint rows in `drop_order` and resumes the flight phase after
/// each drop until every unit is frozen.
inline Assignment landing_suppression(FlightState s, const ConstraintMatrix& c, std::span<const std::size_t> drop_order,
                                      RandomStream& rng, const Tolerances& tol = default_tolerances) {
  const std::size_t q = c.rows();
  {
    std::vector<std::size_t> sorted(drop_order.begin(), drop_order.end());
    std::sort(sorted.begin(), sorted.end());
    bool ok = sorted.size() == q;
    for (std::size_t k = 0; ok && k < q; ++k) ok = sorted[k] == k;
    detail::require(ok, ErrorCode::InvalidArgument, "drop order must be a permutation of the " + std::to_string(q) + " constraint rows");
  }
  const std::size_t r = s.unfrozen_count();
  std::vector<char> alive(q, 1);
  for (std::size_t step = 0; s.unfrozen_count() > 0; ++step) {
    if (step < q) alive[drop_order[step]] = 0;
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < q; ++k)
      if (alive[k]) rows.push_back(k);
    run_flight(c.a.select_rows(rows), s, rng, tol);
    if (step >= q && s.unfrozen_count() > 0)
      throw Error(ErrorCode::NumericalBreakdown, "suppression landing left units unresolved with no constraints");
  }
  Assignment out = detail::frozen_assignment(s);
  out.landing_units = r;
  out.landing_mode = "suppression";
  return out;
}

enum class LandingMode { LinearProgram, Suppression };

struct LandingPolicy {
  /// LinearProgram falls back to suppression when more units than
  /// `lp_max_unresolved` remain after the flight phase.
  LandingMode mode = LandingMode::LinearProgram;
  CostKind cost = CostKind::Identity;
  /// Used when cost == Custom; must match the number of kept constraint rows.
  Matrix cost_matrix;
  /// Empty means default_drop_order.
  std::vector<std::size_t> drop_order;
  std::size_t lp_max_unresolved = default_tolerances.lp_max_unresolved;
};

struct CubeOutcome {
  Assignment assignment;
  ConstraintMatrix constraints;
  FlightState flight;
};

inline Matrix landing_cost_matrix(const LandingPolicy& policy, const ConstraintMatrix& c, std::span<const double> pi,
                                  const Tolerances& tol) {
  switch (policy.cost) {
    case CostKind::Identity: return Matrix::identity(c.rows());
    case CostKind::InverseCovariance: return inverse_covariance_cost(c, pi, tol);
    case CostKind::Custom: validate_cost_matrix(policy.cost_matrix); return policy.cost_matrix;
  }
  return Matrix::identity(c.rows());
}

/// Constraint construction, flight phase and landing. The flight phase draws
/// from `rng`; the landing phase from its "landing" substream.
inline CubeOutcome cube_run(const Matrix& x, std::span<const double> pi, const BalanceSpec& spec, const LandingPolicy& policy,
                            RandomStream& rng, Tolerances tol = default_tolerances) {
  tol.lp_max_unresolved = policy.lp_max_unresolved;
  CubeOutcome out;
  out.constraints = build_constraints(x, pi, spec, tol);
  detail::require(out.constraints.candidate_rows > 0, ErrorCode::InvalidArgument, "balance specification has no constraints");
  out.flight = flight_phase(out.constraints.a, pi, rng, tol);
  RandomStream landing_rng = rng.substream(streams::landing);
  const std::size_t r = out.flight.unfrozen_count();
  if (policy.mode == LandingMode::LinearProgram && r <= tol.lp_max_unresolved) {
    out.assignment = landing_lp(out.flight, out.constraints, landing_cost_matrix(policy, out.constraints, pi, tol), landing_rng, tol);
  } else {
    const auto order = policy.drop_order.empty() ? default_drop_order(out.constraints.rows()) : policy.drop_order;
    out.assignment = landing_suppression(out.flight, out.constraints, order, landing_rng, tol);
  }
  out.assignment.design_name = "cube";
  out.assignment.seed = rng.seed();
  return out;
}

inline Assignment cube_assign(const Matrix& x, std::span<const double> pi, const BalanceSpec& spec, const LandingPolicy& policy,
                              RandomStream& rng, const Tolerances& tol = default_tolerances) {
  return cube_run(x, pi, spec, policy, rng, tol).assignment;
}

/// Deterministic bound on |Delta_j| for covariates bounded by k in absolute
/// value: k q / (c n) with c = min_i min(pi_i, 1 - pi_i).
inline double cube_balance_bound(double k, std::size_t q, std::span<const double> pi) {
  double c = 1.0;
  for (double p : pi) c = std::min({c, p, 1.0 - p});
  return k * static_cast<double>(q) / (c * static_cast<double>(pi.size()));
}

}  // namespace cubedesign
