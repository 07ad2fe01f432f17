// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <span>
#include <vector>

#include "moeskew/trace.hpp"

namespace moeskew {

/// Gini coefficient of a non-negative load vector, computed from the sorted
/// form sum_j (2j - P - 1) c_(j) / (P * sum c). The attainable maximum is
/// (P-1)/P (one entry holds everything), not 1.
///
/// The integer overload accumulates exactly in 128-bit arithmetic, so the
/// only rounding is the final division. Throws InvalidArgument on an empty
/// or all-zero vector (the ratio is undefined, and 0 would read as
/// "perfectly balanced").
double gini(std::span<const Count> counts);
double gini(std::span<const double> values);

/// max / mean. Throws InvalidArgument on an empty or all-zero vector.
double max_mean(std::span<const Count> loads);
double max_mean(std::span<const double> values);

struct DirichletOptions {
  // Component variance below this floor returns +infinity.
  double variance_floor = 1e-12;
  // Estimates at or below this value (including the vertex case, where
  // the variance exceeds anything a positive alpha produces) are clamped.
  double alpha_min = 1e-3;
  double simplex_tolerance = 1e-9;
};

inline constexpr double kAlphaInfinity = std::numeric_limits<double>::infinity();

/// Moment-matched concentration of a symmetric Dirichlet for one simplex
/// vector. V is the mean squared deviation of the P components from 1/P
/// (the known mean, so the divisor is P), and
/// alpha = ((1 - 1/P) / (P V) - 1) / P.
/// Throws InvalidArgument for P < 2 or a non-simplex input.
double dirichlet_alpha(std::span<const double> proportions, const DirichletOptions& opts = {});

/// Window estimator: averages V over all draws, then matches once. Unlike
/// the mean of per-draw estimates this has no Jensen bias from 1/V.
/// Every draw must have the same length.
double dirichlet_alpha_pooled(std::span<const std::vector<double>> draws,
                              const DirichletOptions& opts = {});

/// Normalizes counts to proportions. Throws InvalidArgument if all zero.
std::vector<double> proportions(std::span<const Count> counts);

/// Lower bound on the per-rank max/mean that any balanced placement of e
/// over p ranks can achieve: max_mean(e) * p / E. Vacuous when below 1.
double rank_ratio_lower_bound(const ExpertLoads& e, int p);

/// c_r = sum of e over the experts placed on rank r.
RankLoads expert_to_rank_loads(const ExpertLoads& e, const Placement& placement);

struct MetricSummary {
  double mean = 0.0;
  double stdev = 0.0;  // sample (n - 1) standard deviation; 0 for n = 1
  double p50 = 0.0;
  double p99 = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Nearest-rank percentile (rank ceil(q * n), 1-based) of an unsorted
/// sample. q in (0, 1].
double nearest_rank_percentile(std::span<const double> values, double q);

/// Throws InvalidArgument on an empty window.
MetricSummary summarize(std::span<const double> values);

}  // namespace moeskew
