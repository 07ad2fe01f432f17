// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string_view>
#include <utility>

namespace moeskew {

/// SplitMix64. Used wherever a stream must be reproducible outside this
/// code base (stream transforms, placements, sub-seed derivation); the
/// whole algorithm is the three lines in operator().
class SplitMix64 {
public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

private:
  std::uint64_t state_;
};

/// Finalizer of SplitMix64 applied to a single value.
std::uint64_t mix64(std::uint64_t x);

/// Sub-seed for a labeled purpose: FNV-1a of the label, folded with the
/// base seed and each index through mix64. Stable across platforms.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                          std::initializer_list<std::uint64_t> indices = {});

/// Uniform integer in [0, n) by Lemire's multiply-and-reject method.
/// n must be positive.
template <class Engine>
std::uint64_t bounded(Engine& gen, std::uint64_t n) {
  unsigned __int128 m = static_cast<unsigned __int128>(gen()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(gen()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
template <class Engine>
double uniform01(Engine& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

/// Uniform double in (0, 1).
template <class Engine>
double uniform_open01(Engine& gen) {
  return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

/// Fisher-Yates, high index down: for i = n-1 .. 1, swap(a[i], a[bounded(i+1)]).
template <class T, class Engine>
void fisher_yates(std::span<T> a, Engine& gen) {
  for (std::size_t i = a.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(bounded(gen, i));
    using std::swap;
    swap(a[i - 1], a[j]);
  }
}

}  // namespace moeskew
