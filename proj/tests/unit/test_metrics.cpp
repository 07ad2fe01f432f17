// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "moeskew/error.hpp"
#include "moeskew/metrics.hpp"
#include "moeskew/workload.hpp"

namespace moeskew {
namespace {

// Mean absolute difference over all ordered pairs, halved and normalized
// by the mean: the textbook definition, independent of sorting.
long double gini_mad(const std::vector<Count>& c) {
  const auto n = static_cast<long double>(c.size());
  long double diff = 0.0L;
  long double sum = 0.0L;
  for (Count a : c) {
    sum += static_cast<long double>(a);
    for (Count b : c) diff += std::fabs(static_cast<long double>(a) - static_cast<long double>(b));
  }
  return diff / (2.0L * n * sum);
}

TEST(Gini, MatchesMeanAbsoluteDifference) {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> len(2, 256);
  std::uniform_int_distribution<Count> val(0, 1'000'000);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Count> c(static_cast<std::size_t>(len(gen)));
    for (auto& v : c) v = val(gen);
    if (std::all_of(c.begin(), c.end(), [](Count v) { return v == 0; })) c[0] = 1;
    EXPECT_NEAR(gini(c), static_cast<double>(gini_mad(c)), 1e-12);
  }
}

TEST(Gini, KnownValues) {
  EXPECT_EQ(gini(std::vector<Count>{0, 0, 0, 100}), 0.75);
  EXPECT_EQ(gini(std::vector<Count>{5, 5, 5, 5}), 0.0);
  EXPECT_EQ(gini(std::vector<Count>{7}), 0.0);
  EXPECT_DOUBLE_EQ(gini(std::vector<double>{0.0, 0.0, 0.0, 2.5}), 0.75);
}

TEST(Gini, MaximumIsPMinusOneOverP) {
  for (int p : {2, 4, 16, 32}) {
    std::vector<Count> c(static_cast<std::size_t>(p), 0);
    c[3 % p] = 1234;
    EXPECT_NEAR(gini(c), static_cast<double>(p - 1) / p, 1e-15);
  }
}

TEST(Gini, ScaleAndPermutationInvariant) {
  std::mt19937_64 gen(2);
  std::vector<Count> c(50);
  for (auto& v : c) v = static_cast<Count>(gen() % 1000);
  const double g = gini(c);
  auto scaled = c;
  for (auto& v : scaled) v *= 7;
  EXPECT_NEAR(gini(scaled), g, 1e-15);
  std::shuffle(c.begin(), c.end(), gen);
  EXPECT_NEAR(gini(c), g, 1e-15);
}

TEST(Gini, RejectsEmptyAndZero) {
  EXPECT_THROW(gini(std::vector<Count>{}), InvalidArgument);
  EXPECT_THROW(gini(std::vector<Count>{0, 0}), InvalidArgument);
  EXPECT_THROW(gini(std::vector<double>{1.0, -1.0}), InvalidArgument);
}

TEST(Gini, HugeCountsStayExact) {
  const Count big = 4'000'000'000'000'000'000LL;
  EXPECT_EQ(gini(std::vector<Count>{0, 0, 0, big}), 0.75);
}

TEST(MaxMean, Basics) {
  EXPECT_DOUBLE_EQ(max_mean(std::vector<Count>{1, 1, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(max_mean(std::vector<Count>{0, 0, 0, 8}), 4.0);
  EXPECT_THROW(max_mean(std::vector<Count>{}), InvalidArgument);
  EXPECT_THROW(max_mean(std::vector<Count>{0, 0}), InvalidArgument);
}

TEST(Dirichlet, UniformVectorIsInfinite) {
  const std::vector<double> u(16, 1.0 / 16.0);
  EXPECT_TRUE(std::isinf(dirichlet_alpha(u)));
}

TEST(Dirichlet, VertexClampsToMinimum) {
  std::vector<double> v(16, 0.0);
  v[0] = 1.0;
  EXPECT_EQ(dirichlet_alpha(v), DirichletOptions{}.alpha_min);
}

TEST(Dirichlet, ClosedFormOnTwoPoints) {
  // P = 2, components (0.3, 0.7): V = 0.04, alpha = ((1 - 0.5) / (2 * 0.04) - 1) / 2.
  const std::vector<double> p{0.3, 0.7};
  EXPECT_NEAR(dirichlet_alpha(p), ((0.5 / 0.08) - 1.0) / 2.0, 1e-12);
}

TEST(Dirichlet, RejectsNonSimplexAndShortInput) {
  EXPECT_THROW(dirichlet_alpha(std::vector<double>{0.5, 0.6}), InvalidArgument);
  EXPECT_THROW(dirichlet_alpha(std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(dirichlet_alpha(std::vector<double>{1.5, -0.5}), InvalidArgument);
}

TEST(Dirichlet, PooledRecoversTruth) {
  for (double alpha : {0.16, 1.0, 7.5, 40.0}) {
    std::vector<std::vector<double>> draws;
    for (std::uint64_t d = 0; d < 400; ++d) draws.push_back(sample_popularity(16, alpha, 1000 + d));
    const double est = dirichlet_alpha_pooled(draws);
    EXPECT_NEAR(est / alpha, 1.0, 0.2) << "alpha " << alpha;
  }
}

TEST(Proportions, NormalizesAndRejectsZero) {
  const auto p = proportions(std::vector<Count>{1, 3});
  EXPECT_DOUBLE_EQ(p[0], 0.25);
  EXPECT_DOUBLE_EQ(p[1], 0.75);
  EXPECT_THROW(proportions(std::vector<Count>{0, 0}), InvalidArgument);
}

TEST(RankBound, ExpertToRankLoadsAndBound) {
  const ExpertLoads e{{8, 0, 0, 0, 4, 4, 0, 0}};
  const Placement block({0, 0, 1, 1, 2, 2, 3, 3}, 4);
  const auto c = expert_to_rank_loads(e, block);
  EXPECT_EQ(c.counts, (std::vector<Count>{8, 0, 8, 0}));
  // max_mean(e) = 8 / 2 = 4, times P/E = 0.5 -> 2; the block layout hits it.
  EXPECT_DOUBLE_EQ(rank_ratio_lower_bound(e, 4), 2.0);
  EXPECT_DOUBLE_EQ(max_mean(c.counts), 2.0);
  EXPECT_THROW(expert_to_rank_loads(ExpertLoads{{1, 2, 3}}, block), InvalidArgument);
}

TEST(Percentile, NearestRank) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(3));
  EXPECT_EQ(nearest_rank_percentile(v, 0.99), 99.0);
  EXPECT_EQ(nearest_rank_percentile(v, 0.5), 50.0);
  EXPECT_EQ(nearest_rank_percentile(v, 1.0), 100.0);
  EXPECT_EQ(nearest_rank_percentile(std::vector<double>{4.0, 1.0, 9.0}, 0.99), 9.0);
  EXPECT_THROW(nearest_rank_percentile(v, 0.0), InvalidArgument);
  EXPECT_THROW(nearest_rank_percentile(std::vector<double>{}, 0.5), InvalidArgument);
}

TEST(Summary, MomentsAndOrderStatistics) {
  const std::vector<double> v{2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_NEAR(s.stdev, std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_EQ(s.min, 2.0);
  EXPECT_EQ(s.max, 9.0);
  EXPECT_EQ(s.p50, 4.0);
  EXPECT_EQ(s.p99, 9.0);
  EXPECT_EQ(s.count, 8u);
  EXPECT_EQ(summarize(std::vector<double>{3.0}).stdev, 0.0);
  EXPECT_THROW(summarize(std::vector<double>{}), InvalidArgument);
}

TEST(Gini, SmallHandValue) { EXPECT_DOUBLE_EQ(gini(std::vector<Count>{1, 2, 3, 4}), 0.25); }

TEST(MaxMean, HandValuesAndMultinomialEnvelope) {
  EXPECT_DOUBLE_EQ(max_mean(std::vector<Count>{10, 10, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(max_mean(std::vector<Count>{30, 10, 10, 10}), 2.0);
  // Uniform multinomial, T = 1e6 over 64 bins: the max sits a few standard
  // deviations (sqrt(T/64) = 125) above 15625, well inside 5%.
  const std::vector<double> pi(64, 1.0 / 64.0);
  const auto c = sample_expert_choices(1'000'000, pi, 1, 4);
  std::vector<Count> e(64, 0);
  for (int v : c) ++e[static_cast<std::size_t>(v)];
  const double m = max_mean(e);
  EXPECT_GT(m, 1.0);
  EXPECT_LT(m, 1.05);
}

TEST(RankBound, HandValues) {
  // e with max/mean 4.0 at E=8, p=4 -> 2.0.
  EXPECT_DOUBLE_EQ(rank_ratio_lower_bound(ExpertLoads{{16, 4, 4, 0, 0, 4, 4, 0}}, 4), 2.0);
  // Uniform e: p/E, vacuous.
  EXPECT_DOUBLE_EQ(rank_ratio_lower_bound(ExpertLoads{std::vector<Count>(8, 3)}, 4), 0.5);
}

TEST(RankLoads, BlockPlacementArithmetic) {
  EXPECT_EQ(expert_to_rank_loads(ExpertLoads{{1, 2, 3, 4}}, Placement({0, 0, 1, 1}, 2)).counts,
            (std::vector<Count>{3, 7}));
  const ExpertLoads e{{5, 0, 9, 2}};
  EXPECT_EQ(expert_to_rank_loads(e, Placement({0, 1, 2, 3}, 4)).counts, e.counts);
}

TEST(Summary, ConstantAndTwoPoint) {
  const auto c = summarize(std::vector<double>(10, 2.5));
  EXPECT_EQ(c.mean, 2.5);
  EXPECT_EQ(c.p50, 2.5);
  EXPECT_EQ(c.p99, 2.5);
  EXPECT_EQ(c.stdev, 0.0);
  const auto t = summarize(std::vector<double>{1.0, 3.0});
  EXPECT_EQ(t.mean, 2.0);
  EXPECT_DOUBLE_EQ(t.stdev, std::sqrt(2.0));
}

}  // namespace
}  // namespace moeskew
