#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cubedesign/error.hpp"
#include "cubedesign/matrix.hpp"
#include "cubedesign/random.hpp"

namespace cubedesign {

struct Assignment {
  std::vector<int> d;
  std::string design_name;
  std::uint64_t seed = 0;
  /// Units resolved by the landing phase (always 0 for baseline designs).
  std::size_t landing_units = 0;
  /// "none", "lp" or "suppression".
  std::string landing_mode = "none";

  std::size_t treated() const { return static_cast<std::size_t>(std::count(d.begin(), d.end(), 1)); }
};

struct StrataPartition {
  std::vector<std::size_t> labels;
  std::size_t stratum_count = 0;

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(stratum_count);
    for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
    return out;
  }
};

namespace detail {

inline void check_open_probabilities(std::span<const double> pi) {
  for (std::size_t i = 0; i < pi.size(); ++i)
    if (!(pi[i] > 0.0 && pi[i] < 1.0))
      throw Error(ErrorCode::InvalidProbability,
                  "unit " + std::to_string(i) + " has probability " + std::to_string(pi[i]) + " outside (0, 1)");
}

/// Moves a uniformly chosen k-subset of `items` to its front.
template <class T>
void partial_shuffle(std::vector<T>& items, std::size_t k, RandomStream& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
}

}  // namespace detail

inline Assignment coin_toss(std::span<const double> pi, RandomStream& rng) {
  detail::check_open_probabilities(pi);
  Assignment out{std::vector<int>(pi.size()), "coin_toss", rng.seed()};
  for (std::size_t i = 0; i < pi.size(); ++i) out.d[i] = rng.bernoulli(pi[i]) ? 1 : 0;
  return out;
}

inline Assignment complete_randomization(std::size_t n, std::size_t n_treated, RandomStream& rng) {
  if (n_treated == 0 || n_treated >= n)
    throw Error(ErrorCode::InvalidGroupSize,
                "treated count " + std::to_string(n_treated) + " must lie strictly between 0 and " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  detail::partial_shuffle(idx, n_treated, rng);
  Assignment out{std::vector<int>(n, 0), "complete_randomization", rng.seed()};
  for (std::size_t k = 0; k < n_treated; ++k) out.d[idx[k]] = 1;
  return out;
}

/// Cuts every covariate at its empirical j/ell quantiles (order statistic of
/// rank ceil(n j / ell)); values equal to a cut fall in the lower cell. A
/// unit's stratum is its tuple of cells; non-empty tuples are numbered in
/// lexicographic order.
inline StrataPartition stratify_by_quantiles(const Matrix& x, std::size_t ell) {
  detail::require(ell >= 2, ErrorCode::InvalidArgument, "number of quantile cells must be at least 2");
  const std::size_t n = x.rows(), p = x.cols();
  detail::require(n >= 1, ErrorCode::DimensionMismatch, "stratification needs at least one unit");
  std::vector<std::vector<std::size_t>> cells(n, std::vector<std::size_t>(p, 0));
  for (std::size_t k = 0; k < p; ++k) {
    std::vector<double> sorted = x.col(k);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (std::size_t j = 1; j < ell; ++j) {
      const std::size_t rank = (n * j + ell - 1) / ell;  // ceil(n j / ell), 1-based
      cuts.push_back(sorted[std::max<std::size_t>(rank, 1) - 1]);
    }
    for (std::size_t i = 0; i < n; ++i)
      cells[i][k] = static_cast<std::size_t>(std::count_if(cuts.begin(), cuts.end(), [&](double c) { return x(i, k) > c; }));
  }
  std::map<std::vector<std::size_t>, std::size_t> ids;
  for (const auto& c : cells) ids.emplace(c, 0);
  std::size_t next = 0;
  for (auto& [tuple, id] : ids) id = next++;
  StrataPartition out{std::vector<std::size_t>(n), ids.size()};
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = ids.at(cells[i]);
  return out;
}

/// Within each stratum of size m treats floor(m/2) units, plus one more with
/// probability 1/2 when m is odd; the treated subset is uniform.
inline Assignment stratified_assign(const StrataPartition& partition, RandomStream& rng) {
  for (std::size_t label : partition.labels)
    detail::require(label < partition.stratum_count, ErrorCode::InvalidArgument, "stratum label out of range");
  Assignment out{std::vector<int>(partition.labels.size(), 0), "stratified", rng.seed()};
  for (auto& members : partition.members()) {
    const std::size_t m = members.size();
    std::size_t k = m / 2;
    if (m % 2 == 1 && rng.bernoulli(0.5)) ++k;
    detail::partial_shuffle(members, k, rng);
    for (std::size_t j = 0; j < k; ++j) out.d[members[j]] = 1;
  }
  return out;
}

/// Greedy nearest-neighbour pairing. Units are visited in increasing order of
/// the covariate with the largest variance (ties by index); each unvisited
/// unit is paired with its nearest unpaired unit in Euclidean distance, ties
/// going to the lower index.
inline std::vector<std::pair<std::size_t, std::size_t>> greedy_pairs(const Matrix& x) {
  const std::size_t n = x.rows(), p = x.cols();
  if (n % 2 != 0) throw Error(ErrorCode::OddSampleSize, "matched pairs needs an even number of units, got " + std::to_string(n));
  std::size_t axis = 0;
  double best_var = -1.0;
  for (std::size_t k = 0; k < p; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, k);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x(i, k) - mean) * (x(i, k) - mean);
    if (var > best_var) {
      best_var = var;
      axis = k;
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (p > 0)
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x(a, axis) < x(b, axis); });

  std::vector<char> paired(n, 0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n / 2);
  for (std::size_t i : order) {
    if (paired[i]) continue;
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || paired[j]) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < p; ++k) dist += (x(i, k) - x(j, k)) * (x(i, k) - x(j, k));
      if (dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    paired[i] = paired[best] = 1;
    pairs.emplace_back(std::min(i, best), std::max(i, best));
  }
  return pairs;
}

inline Assignment assign_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t n,
                               RandomStream& rng) {
  Assignment out{std::vector<int>(n, 0), "matched_pairs", rng.seed()};
  for (const auto& [a, b] : pairs) out.d[rng.bernoulli(0.5) ? a : b] = 1;
  return out;
}

inline Assignment matched_pairs(const Matrix& x, RandomStream& rng) { return assign_pairs(greedy_pairs(x), x.rows(), rng); }

}  // namespace cubedesign
