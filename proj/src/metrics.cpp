// SPDX-License-Identifier: Apache-2.0

#include "moeskew/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "moeskew/error.hpp"

namespace moeskew {

namespace {

void require_non_negative(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw InvalidArgument(fmt::format("{}: entries must be finite and non-negative, got {}", what, x));
    }
  }
}

void require_non_negative(std::span<const Count> v, const char* what) {
  for (Count x : v) {
    if (x < 0) throw InvalidArgument(fmt::format("{}: entries must be non-negative, got {}", what, x));
  }
}

}  // namespace

double gini(std::span<const Count> counts) {
  if (counts.empty()) throw InvalidArgument("gini: empty vector");
  require_non_negative(counts, "gini");
  std::vector<Count> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end());
  const auto p = static_cast<__int128>(sorted.size());
  __int128 weighted = 0;
  __int128 total = 0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    const auto rank = static_cast<__int128>(j + 1);
    weighted += (2 * rank - p - 1) * sorted[j];
    total += sorted[j];
  }
  if (total == 0) throw InvalidArgument("gini: all-zero vector (undefined)");
  return static_cast<double>(static_cast<long double>(weighted) /
                             (static_cast<long double>(p) * static_cast<long double>(total)));
}

double gini(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("gini: empty vector");
  require_non_negative(values, "gini");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto p = static_cast<long double>(sorted.size());
  long double weighted = 0.0L;
  long double total = 0.0L;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    weighted += (2.0L * static_cast<long double>(j + 1) - p - 1.0L) * sorted[j];
    total += sorted[j];
  }
  if (total == 0.0L) throw InvalidArgument("gini: all-zero vector (undefined)");
  return static_cast<double>(weighted / (p * total));
}

double max_mean(std::span<const Count> loads) {
  if (loads.empty()) throw InvalidArgument("max_mean: empty vector");
  require_non_negative(loads, "max_mean");
  __int128 total = 0;
  for (Count x : loads) total += x;
  if (total == 0) throw InvalidArgument("max_mean: all-zero vector (undefined)");
  const Count top = *std::max_element(loads.begin(), loads.end());
  return static_cast<double>(static_cast<long double>(top) * static_cast<long double>(loads.size()) /
                             static_cast<long double>(total));
}

double max_mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("max_mean: empty vector");
  require_non_negative(values, "max_mean");
  long double total = 0.0L;
  for (double x : values) total += x;
  if (total == 0.0L) throw InvalidArgument("max_mean: all-zero vector (undefined)");
  const double top = *std::max_element(values.begin(), values.end());
  return static_cast<double>(top * static_cast<long double>(values.size()) / total);
}

namespace {

double component_variance(std::span<const double> p, const DirichletOptions& opts) {
  if (p.size() < 2) throw InvalidArgument(fmt::format("dirichlet_alpha: need P >= 2, got {}", p.size()));
  long double sum = 0.0L;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw InvalidArgument(fmt::format("dirichlet_alpha: component {} is not a probability", x));
    }
    sum += x;
  }
  if (std::fabs(static_cast<double>(sum - 1.0L)) > opts.simplex_tolerance) {
    throw InvalidArgument(
        fmt::format("dirichlet_alpha: components sum to {}, not 1", static_cast<double>(sum)));
  }
  const long double centre = 1.0L / static_cast<long double>(p.size());
  long double ss = 0.0L;
  for (double x : p) ss += (x - centre) * (x - centre);
  return static_cast<double>(ss / static_cast<long double>(p.size()));
}

double match_alpha(double variance, std::size_t components, const DirichletOptions& opts) {
  if (variance < opts.variance_floor) return kAlphaInfinity;
  const double p = static_cast<double>(components);
  const double alpha = ((1.0 - 1.0 / p) / (p * variance) - 1.0) / p;
  return std::max(alpha, opts.alpha_min);
}

}  // namespace

double dirichlet_alpha(std::span<const double> proportions, const DirichletOptions& opts) {
  return match_alpha(component_variance(proportions, opts), proportions.size(), opts);
}

double dirichlet_alpha_pooled(std::span<const std::vector<double>> draws, const DirichletOptions& opts) {
  if (draws.empty()) throw InvalidArgument("dirichlet_alpha_pooled: no draws");
  const auto p = draws.front().size();
  long double total = 0.0L;
  for (const auto& d : draws) {
    if (d.size() != p) {
      throw InvalidArgument(
          fmt::format("dirichlet_alpha_pooled: draw of length {} differs from {}", d.size(), p));
    }
    total += component_variance(d, opts);
  }
  return match_alpha(static_cast<double>(total / static_cast<long double>(draws.size())), p, opts);
}

std::vector<double> proportions(std::span<const Count> counts) {
  require_non_negative(counts, "proportions");
  long double total = 0.0L;
  for (Count x : counts) total += static_cast<long double>(x);
  if (total == 0.0L) throw InvalidArgument("proportions: all-zero vector");
  std::vector<double> out;
  out.reserve(counts.size());
  for (Count x : counts) out.push_back(static_cast<double>(static_cast<long double>(x) / total));
  return out;
}

double rank_ratio_lower_bound(const ExpertLoads& e, int p) {
  const int experts = e.experts();
  if (p < 1 || experts == 0 || experts % p != 0) {
    throw InvalidArgument(
        fmt::format("rank_ratio_lower_bound: expert count {} not divisible by rank count {}", experts, p));
  }
  return max_mean(e.counts) * static_cast<double>(p) / static_cast<double>(experts);
}

RankLoads expert_to_rank_loads(const ExpertLoads& e, const Placement& placement) {
  if (e.experts() != placement.experts()) {
    throw InvalidArgument(fmt::format("expert_to_rank_loads: {} expert loads vs placement over {} experts",
                                      e.experts(), placement.experts()));
  }
  RankLoads c;
  c.counts.assign(static_cast<std::size_t>(placement.ranks()), 0);
  for (int l = 0; l < e.experts(); ++l) {
    c.counts[static_cast<std::size_t>(placement.rank_of(l))] += e.counts[static_cast<std::size_t>(l)];
  }
  return c;
}

double nearest_rank_percentile(std::span<const double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile: empty window");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument(fmt::format("percentile: q = {} outside (0, 1]", q));
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

MetricSummary summarize(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("summarize: empty window");
  MetricSummary s;
  s.count = values.size();
  const long double sum = std::accumulate(values.begin(), values.end(), 0.0L);
  const long double mean = sum / static_cast<long double>(values.size());
  long double ss = 0.0L;
  for (double x : values) ss += (x - mean) * (x - mean);
  s.mean = static_cast<double>(mean);
  s.stdev = values.size() > 1 ? std::sqrt(static_cast<double>(ss / static_cast<long double>(values.size() - 1)))
                              : 0.0;
  s.p50 = nearest_rank_percentile(values, 0.50);
  s.p99 = nearest_rank_percentile(values, 0.99);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

}  // namespace moeskew
