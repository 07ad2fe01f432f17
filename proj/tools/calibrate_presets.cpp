// SPDX-License-Identifier: Apache-2.0
//
// Finds the Dirichlet concentration whose mean per-rank Gini at the
// reference scale hits each preset band centre. Prints one line per preset;
// paste the alphas into src/presets.cpp.

#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <string>

#include <fmt/format.h>

#include "moeskew/parallel.hpp"
#include "moeskew/workload.hpp"

int main(int argc, char** argv) {
  using namespace moeskew;
  std::uint64_t seed = 2024;
  int runs = 20;
  if (argc > 1) seed = std::strtoull(argv[1], nullptr, 10);
  if (argc > 2) runs = std::atoi(argv[2]);
  set_thread_count(0);

  const ReferenceScale scale;
  fmt::print("# seed {} runs {} E={} k={} P={} tokens={}\n", seed, runs, scale.experts, scale.topk, scale.ranks,
             scale.tokens);
  for (auto label : all_presets()) {
    const auto p = preset(label);
    const double alpha = calibrate_alpha(p.band.centre(), scale, runs, seed);
    const auto g = preset_gini_runs(alpha, scale, runs, seed);
    const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    const auto cur = preset_gini_runs(p.alpha, scale, runs, seed);
    const double cur_mean = std::accumulate(cur.begin(), cur.end(), 0.0) / static_cast<double>(cur.size());
    fmt::print("{:<16} band [{:.2f}, {:.2f}] alpha {:.4g} mean_gini {:.4f} (current alpha {:.4g} -> {:.4f})\n",
               to_string(label), p.band.lo, p.band.hi, alpha, mean, p.alpha, cur_mean);
  }
  return 0;
}
