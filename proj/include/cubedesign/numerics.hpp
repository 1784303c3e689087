#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cubedesign/config.hpp"
#include "cubedesign/error.hpp"
#include "cubedesign/matrix.hpp"

namespace cubedesign {

/// Result of Gauss-Jordan elimination: the reduced matrix and its pivot columns.
struct RowEchelon {
  Matrix reduced;
  std::vector<std::size_t> pivot_columns;

  std::size_t rank() const noexcept { return pivot_columns.size(); }
};

/// Reduced row echelon form with partial pivoting. A candidate pivot whose
/// magnitude is at most `pivot_tol * max(1, max|a_ij|)` marks its column as
/// dependent.
inline RowEchelon reduce_row_echelon(Matrix a, double pivot_tol = default_tolerances.pivot) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  const double threshold = pivot_tol * std::max(1.0, a.max_abs());
  std::vector<std::size_t> pivots;
  std::size_t r = 0;
  for (std::size_t c = 0; c < cols && r < rows; ++c) {
    std::size_t best = r;
    double best_abs = std::abs(a(r, c));
    for (std::size_t i = r + 1; i < rows; ++i) {
      const double v = std::abs(a(i, c));
      if (v > best_abs) {
        best = i;
        best_abs = v;
      }
    }
    if (best_abs <= threshold) {
      for (std::size_t i = r; i < rows; ++i) a(i, c) = 0.0;
      continue;
    }
    if (best != r) std::swap_ranges(a.row(best).begin(), a.row(best).end(), a.row(r).begin());
    const double inv = 1.0 / a(r, c);
    for (double& v : a.row(r)) v *= inv;
    a(r, c) = 1.0;
    for (std::size_t i = 0; i < rows; ++i) {
      if (i == r) continue;
      const double f = a(i, c);
      if (f == 0.0) continue;
      auto dst = a.row(i);
      auto src = a.row(r);
      for (std::size_t j = c; j < cols; ++j) dst[j] -= f * src[j];
      dst[c] = 0.0;
    }
    pivots.push_back(c);
    ++r;
  }
  return {std::move(a), std::move(pivots)};
}

namespace detail {

inline std::vector<std::size_t> free_columns(const RowEchelon& rref) {
  std::vector<std::size_t> out;
  std::size_t k = 0;
  for (std::size_t c = 0; c < rref.reduced.cols(); ++c) {
    if (k < rref.pivot_columns.size() && rref.pivot_columns[k] == c)
      ++k;
    else
      out.push_back(c);
  }
  return out;
}

inline std::vector<double> kernel_vector_for(const RowEchelon& rref, std::size_t free_col) {
  std::vector<double> u(rref.reduced.cols(), 0.0);
  u[free_col] = 1.0;
  for (std::size_t k = 0; k < rref.pivot_columns.size(); ++k)
    u[rref.pivot_columns[k]] = -rref.reduced(k, free_col);
  return u;
}

inline void normalize_inf(std::vector<double>& u) {
  const double m = inf_norm(u);
  for (double& v : u) v /= m;
}

}  // namespace detail

/// Kernel vector of `a` normalized to unit sup-norm, or nullopt when `a` has
/// full column rank. Uses the first dependent column, so the result is a
/// deterministic function of `a`.
inline std::optional<std::vector<double>> try_null_space_vector(const Matrix& a,
                                                                const Tolerances& tol = default_tolerances) {
  detail::require(a.cols() >= 1, ErrorCode::DimensionMismatch, "null space of a matrix with no columns");
  if (a.rows() == 0) {
    std::vector<double> u(a.cols(), 0.0);
    u[0] = 1.0;
    return u;
  }
  const RowEchelon rref = reduce_row_echelon(a, tol.pivot);
  const auto free = detail::free_columns(rref);
  if (free.empty()) return std::nullopt;
  auto u = detail::kernel_vector_for(rref, free.front());
  detail::normalize_inf(u);
  return u;
}

inline std::vector<double> null_space_vector(const Matrix& a, const Tolerances& tol = default_tolerances) {
  auto u = try_null_space_vector(a, tol);
  if (!u) throw Error(ErrorCode::NoKernel, "matrix has full column rank");
  return *std::move(u);
}

/// Columns of the returned matrix span ker(a); one column per free variable.
inline Matrix null_space_basis(const Matrix& a, const Tolerances& tol = default_tolerances) {
  if (a.rows() == 0) return Matrix::identity(a.cols());
  const RowEchelon rref = reduce_row_echelon(a, tol.pivot);
  const auto free = detail::free_columns(rref);
  Matrix basis(a.cols(), free.size());
  for (std::size_t k = 0; k < free.size(); ++k) {
    const auto u = detail::kernel_vector_for(rref, free[k]);
    for (std::size_t i = 0; i < u.size(); ++i) basis(i, k) = u[i];
  }
  return basis;
}

/// Solves the symmetric positive semidefinite system g x = h through the
/// normal-equation route used by solve_ols; rank deficiency resolved to the
/// minimum-norm solution.
inline std::vector<double> solve_min_norm(const Matrix& g, std::span<const double> h,
                                          const Tolerances& tol = default_tolerances) {
  const std::size_t k = g.cols();
  Matrix aug(g.rows(), k + 1);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < k; ++j) aug(i, j) = g(i, j);
    aug(i, k) = h[i];
  }
  // Threshold follows the matrix, not the right-hand side.
  double scale = 0.0;
  for (std::size_t i = 0; i < std::min(g.rows(), k); ++i) scale = std::max(scale, std::abs(g(i, i)));
  const double rel = tol.pivot * std::max(1.0, scale) / std::max(1.0, std::max(scale, inf_norm(h)));
  RowEchelon rref = reduce_row_echelon(std::move(aug), rel);
  // A pivot in the augmented column means the system is inconsistent; for
  // normal equations this only arises from round-off, so drop it.
  if (!rref.pivot_columns.empty() && rref.pivot_columns.back() == k) rref.pivot_columns.pop_back();

  std::vector<double> beta(k, 0.0);
  for (std::size_t r = 0; r < rref.pivot_columns.size(); ++r) beta[rref.pivot_columns[r]] = rref.reduced(r, k);

  std::vector<std::size_t> free;
  {
    std::size_t idx = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (idx < rref.pivot_columns.size() && rref.pivot_columns[idx] == c)
        ++idx;
      else
        free.push_back(c);
    }
  }
  if (free.empty()) return beta;

  // Project the basic solution onto the row space: beta - N (N'N)^{-1} N' beta.
  Matrix basis(k, free.size());
  for (std::size_t f = 0; f < free.size(); ++f) {
    basis(free[f], f) = 1.0;
    for (std::size_t r = 0; r < rref.pivot_columns.size(); ++r) basis(rref.pivot_columns[r], f) = -rref.reduced(r, free[f]);
  }
  const Matrix nt = basis.transpose();
  const Matrix ntn = multiply(nt, basis);
  const std::vector<double> ntb = multiply(nt, beta);
  Matrix sys(free.size(), free.size() + 1);
  for (std::size_t i = 0; i < free.size(); ++i) {
    for (std::size_t j = 0; j < free.size(); ++j) sys(i, j) = ntn(i, j);
    sys(i, free.size()) = ntb[i];
  }
  const RowEchelon solved = reduce_row_echelon(std::move(sys), tol.pivot);
  std::vector<double> coef(free.size(), 0.0);
  for (std::size_t r = 0; r < solved.pivot_columns.size(); ++r)
    if (solved.pivot_columns[r] < free.size()) coef[solved.pivot_columns[r]] = solved.reduced(r, free.size());
  const std::vector<double> correction = multiply(basis, coef);
  for (std::size_t i = 0; i < k; ++i) beta[i] -= correction[i];
  return beta;
}

/// Least-squares coefficients minimizing |y - X b|^2. Rank-deficient designs
/// return the minimum-norm minimizer.
inline std::vector<double> solve_ols(const Matrix& x, std::span<const double> y,
                                     const Tolerances& tol = default_tolerances) {
  detail::require(x.rows() == y.size(), ErrorCode::DimensionMismatch,
                  "design has " + std::to_string(x.rows()) + " rows but outcome has " + std::to_string(y.size()));
  detail::require(x.rows() >= x.cols(), ErrorCode::DimensionMismatch, "fewer observations than regressors");
  const std::size_t k = x.cols();
  Matrix g(k, k);
  std::vector<double> h(k, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    for (std::size_t a = 0; a < k; ++a) {
      if (row[a] == 0.0) continue;
      h[a] += row[a] * y[i];
      for (std::size_t b = 0; b < k; ++b) g(a, b) += row[a] * row[b];
    }
  }
  return solve_min_norm(g, h, tol);
}

struct LpProblem {
  std::vector<double> objective;
  Matrix eq_constraints;
  std::vector<double> eq_rhs;
};

struct LpSolution {
  std::vector<double> x;
  double objective = 0.0;
  /// Multipliers y of the equality rows: c - A'y >= 0 and y'b = objective at
  /// optimality.
  std::vector<double> duals;
  std::size_t iterations = 0;
};

namespace detail {

class SimplexTableau {
 public:
  SimplexTableau(const LpProblem& lp, const Tolerances& tol)
      : m_(lp.eq_constraints.rows()), n_(lp.objective.size()), width_(n_ + m_ + 1), tol_(tol),
        t_((m_ + 1) * width_, 0.0), basis_(m_), sign_(m_, 1.0) {
    for (std::size_t i = 0; i < m_; ++i) {
      sign_[i] = lp.eq_rhs[i] < 0.0 ? -1.0 : 1.0;
      for (std::size_t j = 0; j < n_; ++j) at(i, j) = sign_[i] * lp.eq_constraints(i, j);
      at(i, n_ + i) = 1.0;
      at(i, width_ - 1) = sign_[i] * lp.eq_rhs[i];
      basis_[i] = n_ + i;
    }
    entry_eps_ = 1e-9 * std::max(1.0, lp.eq_constraints.max_abs());
  }

  std::size_t iterations() const noexcept { return iterations_; }

  /// Phase 1: minimize the sum of artificials.
  double phase_one() {
    auto obj = objective_row();
    std::fill(obj.begin(), obj.end(), 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) obj[j] -= at(i, j);
      obj[width_ - 1] -= at(i, width_ - 1);
    }
    iterate(n_ + m_);
    return -objective_row()[width_ - 1];
  }

  /// Pivots zero-level artificials out of the basis where possible.
  void expel_artificials() {
    for (std::size_t i = 0; i < m_; ++i) {
      if (basis_[i] < n_) continue;
      std::size_t best = n_;
      double best_abs = entry_eps_;
      for (std::size_t j = 0; j < n_; ++j) {
        const double v = std::abs(at(i, j));
        if (v > best_abs) {
          best_abs = v;
          best = j;
        }
      }
      if (best < n_) pivot(i, best);
    }
  }

  void phase_two(std::span<const double> cost) {
    auto obj = objective_row();
    std::fill(obj.begin(), obj.end(), 0.0);
    for (std::size_t j = 0; j < n_; ++j) obj[j] = cost[j];
    for (std::size_t i = 0; i < m_; ++i) {
      const std::size_t b = basis_[i];
      const double cb = b < n_ ? cost[b] : 0.0;
      if (cb == 0.0) continue;
      for (std::size_t j = 0; j < width_; ++j) obj[j] -= cb * at(i, j);
    }
    iterate(n_);
  }

  std::vector<double> primal() const {
    std::vector<double> x(n_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      if (basis_[i] < n_) x[basis_[i]] = std::max(0.0, at(i, width_ - 1));
    return x;
  }

  std::vector<double> duals() const {
    std::vector<double> y(m_);
    const double* obj = &t_[m_ * width_];
    for (std::size_t i = 0; i < m_; ++i) y[i] = -obj[n_ + i] * sign_[i];
    return y;
  }

 private:
  double& at(std::size_t i, std::size_t j) { return t_[i * width_ + j]; }
  double at(std::size_t i, std::size_t j) const { return t_[i * width_ + j]; }
  std::span<double> objective_row() { return {t_.data() + m_ * width_, width_}; }

  void pivot(std::size_t row, std::size_t col) {
    const double inv = 1.0 / at(row, col);
    double* pr = &t_[row * width_];
    for (std::size_t j = 0; j < width_; ++j) pr[j] *= inv;
    pr[col] = 1.0;
    for (std::size_t i = 0; i <= m_; ++i) {
      if (i == row) continue;
      double* ri = &t_[i * width_];
      const double f = ri[col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < width_; ++j) ri[j] -= f * pr[j];
      ri[col] = 0.0;
    }
    basis_[row] = col;
    ++iterations_;
  }

  // Dantzig pricing, switching to Bland's rule for as long as steps stay
  // degenerate. Any degenerate run is then a pure Bland sequence, so the
  // method cannot cycle.
  void iterate(std::size_t enterable) {
    bool bland = false;
    const std::size_t cap = 50 * (m_ + 1) * (enterable + 1) + 1000;
    for (std::size_t it = 0;; ++it) {
      if (it > cap) throw Error(ErrorCode::NumericalBreakdown, "simplex iteration limit reached");
      const double* obj = &t_[m_ * width_];
      std::size_t enter = enterable;
      if (bland) {
        for (std::size_t j = 0; j < enterable; ++j)
          if (obj[j] < -tol_.lp_optimality) {
            enter = j;
            break;
          }
      } else {
        double most = -tol_.lp_optimality;
        for (std::size_t j = 0; j < enterable; ++j)
          if (obj[j] < most) {
            most = obj[j];
            enter = j;
          }
      }
      if (enter == enterable) return;

      std::size_t leave = m_;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m_; ++i) {
        const double a = at(i, enter);
        if (a <= entry_eps_) continue;
        const double ratio = std::max(0.0, at(i, width_ - 1)) / a;
        if (ratio < best_ratio - 1e-15 ||
            (ratio <= best_ratio + 1e-15 && leave < m_ && basis_[i] < basis_[leave])) {
          if (ratio < best_ratio) best_ratio = ratio;
          leave = i;
        }
      }
      if (leave == m_) throw Error(ErrorCode::Unbounded, "linear program is unbounded");
      bland = best_ratio <= 1e-15;
      pivot(leave, enter);
    }
  }

  std::size_t m_, n_, width_;
  Tolerances tol_;
  std::vector<double> t_;
  std::vector<std::size_t> basis_;
  std::vector<double> sign_;
  double entry_eps_ = 1e-9;
  std::size_t iterations_ = 0;
};

}  // namespace detail

/// Minimizes c'x subject to A x = b, x >= 0 with a two-phase dense simplex.
inline LpSolution solve_lp(const LpProblem& lp, const Tolerances& tol = default_tolerances) {
  const std::size_t n = lp.objective.size();
  detail::require(lp.eq_constraints.cols() == n, ErrorCode::DimensionMismatch,
                  "constraint matrix has " + std::to_string(lp.eq_constraints.cols()) + " columns for " +
                      std::to_string(n) + " variables");
  detail::require(lp.eq_rhs.size() == lp.eq_constraints.rows(), ErrorCode::DimensionMismatch,
                  "right-hand side length does not match constraint rows");
  detail::require(n >= 1, ErrorCode::DimensionMismatch, "linear program without variables");

  detail::SimplexTableau tableau(lp, tol);
  const double infeasibility = tableau.phase_one();
  if (infeasibility > tol.lp_feasibility * std::max(1.0, inf_norm(lp.eq_rhs)))
    throw Error(ErrorCode::Infeasible, "phase one ended with infeasibility " + std::to_string(infeasibility));
  tableau.expel_artificials();
  tableau.phase_two(lp.objective);

  LpSolution sol;
  sol.x = tableau.primal();
  sol.objective = dot(lp.objective, sol.x);
  sol.duals = tableau.duals();
  sol.iterations = tableau.iterations();
  return sol;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Inverse standard normal CDF: rational approximation refined by one Halley
/// step.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::DomainError, "quantile probability must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace cubedesign
