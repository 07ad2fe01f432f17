// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "moeskew/rng.hpp"

namespace moeskew {
namespace {

TEST(SplitMix64, ReferenceOutputs) {
  // Published reference stream for seed 0 and seed 42.
  SplitMix64 zero(0);
  EXPECT_EQ(zero(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(zero(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(zero(), 0x06c45d188009454fULL);
  SplitMix64 g(42);
  EXPECT_EQ(g(), 13679457532755275413ULL);
}

TEST(Mix64, IsTheSplitMixFinalizer) {
  // One SplitMix64 step from state s returns mix64(s + golden gamma).
  for (std::uint64_t s : {0ULL, 1ULL, 42ULL, ~0ULL}) {
    SplitMix64 g(s);
    EXPECT_EQ(g(), mix64(s + 0x9e3779b97f4a7c15ULL));
  }
}

TEST(DeriveSeed, SensitiveToEveryInput) {
  std::set<std::uint64_t> seen;
  seen.insert(derive_seed(1, "a"));
  seen.insert(derive_seed(2, "a"));
  seen.insert(derive_seed(1, "b"));
  seen.insert(derive_seed(1, "a", {0}));
  seen.insert(derive_seed(1, "a", {1}));
  seen.insert(derive_seed(1, "a", {0, 1}));
  seen.insert(derive_seed(1, "a", {1, 0}));
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(derive_seed(9, "tokens", {3}), derive_seed(9, "tokens", {3}));
}

TEST(Bounded, StaysInRangeAndIsRoughlyUniform) {
  SplitMix64 g(5);
  std::vector<int> hist(7, 0);
  const int n = 70'000;
  for (int i = 0; i < n; ++i) {
    const auto v = bounded(g, 7);
    ASSERT_LT(v, 7u);
    ++hist[v];
  }
  // Chi-square with 6 degrees of freedom; 22.46 is the 0.999 quantile.
  double chi = 0.0;
  for (int h : hist) chi += (h - n / 7.0) * (h - n / 7.0) / (n / 7.0);
  EXPECT_LT(chi, 22.46);
  EXPECT_EQ(bounded(g, 1), 0u);
}

TEST(Uniform01, HalfOpenInterval) {
  SplitMix64 g(6);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100'000; ++i) {
    const double u = uniform01(g);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    const double o = uniform_open01(g);
    ASSERT_GT(o, 0.0);
    ASSERT_LT(o, 1.0);
  }
  EXPECT_LT(lo, 1e-3);
  EXPECT_GT(hi, 1.0 - 1e-3);
}

TEST(FisherYates, MatchesHandWrittenLoop) {
  std::vector<int> a(50);
  std::iota(a.begin(), a.end(), 0);
  auto b = a;
  SplitMix64 g1(77), g2(77);
  fisher_yates(std::span<int>(a), g1);
  for (std::size_t i = b.size() - 1; i >= 1; --i) {
    const auto j = static_cast<std::size_t>(bounded(g2, i + 1));
    std::swap(b[i], b[j]);
  }
  EXPECT_EQ(a, b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> id(50);
  std::iota(id.begin(), id.end(), 0);
  EXPECT_EQ(sorted, id);
}

TEST(FisherYates, AllPermutationsOfThreeAppear) {
  std::set<std::vector<int>> seen;
  SplitMix64 g(8);
  for (int t = 0; t < 600; ++t) {
    std::vector<int> a{0, 1, 2};
    fisher_yates(std::span<int>(a), g);
    seen.insert(a);
  }
  EXPECT_EQ(seen.size(), 6u);
}

}  // namespace
}  // namespace moeskew
