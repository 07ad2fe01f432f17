// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moeskew/trace.hpp"

namespace moeskew {

/// Per-step popularity resampling. When attached to a router, the
/// popularity at step s is a fresh symmetric Dirichlet draw with
/// concentration interpolated geometrically from alpha_start (step 0) to
/// alpha_end (step ramp_steps and later). alpha_start == alpha_end gives
/// plain per-step resampling at a fixed concentration.
struct DriftSchedule {
  double alpha_start = 1.0;
  double alpha_end = 1.0;
  std::int64_t ramp_steps = 1;

  double alpha_at(std::int64_t step) const;
};

struct RouterModel {
  int experts = 0;
  int topk = 0;
  std::vector<double> popularity;  // simplex, length experts
  std::optional<DriftSchedule> drift;

  /// Throws InvalidArgument unless topk <= experts and popularity is a
  /// length-experts simplex vector.
  void validate() const;
};

/// Popularity in effect at a step: the router's own vector, or the drift
/// draw for that step (seeded by derive_seed(seed, "drift", {step})).
std::vector<double> popularity_at(const RouterModel& router, std::int64_t step, std::uint64_t seed);

/// One draw from a symmetric Dirichlet(alpha) over e categories. Gamma
/// variates are drawn in log space so that very small alpha does not
/// underflow every component to zero.
std::vector<double> sample_popularity(int e, double alpha, std::uint64_t seed);

/// pi^sharpness renormalized. sharpness > 1 concentrates, < 1 flattens;
/// the ordering of experts is preserved.
std::vector<double> temper_popularity(std::span<const double> popularity, double sharpness);

/// Per-token routing decisions. experts holds tokens() * topk expert
/// indices, token-major; each token's k entries are distinct.
struct TokenAssignments {
  int topk = 0;
  std::vector<int> origin_rank;
  std::vector<int> experts;

  std::size_t tokens() const { return origin_rank.size(); }
  std::span<const int> choices(std::size_t token) const {
    return std::span<const int>(experts).subspan(token * static_cast<std::size_t>(topk),
                                                 static_cast<std::size_t>(topk));
  }
};

/// Draws k distinct experts per token by successive weighted sampling
/// without replacement from popularity (same law as exponential-key order
/// statistics). Tokens are processed in fixed blocks, each with its own
/// derived seed, so the result depends only on (tokens, popularity, k,
/// seed): not on rank count, placement, or thread count.
/// Experts with zero propensity are chosen only once every positive-weight
/// expert is taken, uniformly among themselves.
std::vector<int> sample_expert_choices(std::size_t tokens, std::span<const double> popularity, int topk,
                                       std::uint64_t seed);

struct RoutedStep {
  TokenAssignments assignments;
  SendCounts send_counts;
  ExpertLoads expert_loads;
};

/// Assigns token i to origin rank i mod p and builds S and e from fixed
/// choices. S[i][j] counts every (token, choice) pair whose token lives on
/// rank i and whose expert lives on rank j.
RoutedStep dispatch(std::vector<int> choices, int topk, const Placement& placement);

/// Counts only; identical to dispatch() without materializing assignments.
std::pair<SendCounts, ExpertLoads> dispatch_counts(std::span<const int> choices, int topk,
                                                   const Placement& placement);

/// Samples and dispatches one step. Throws InvalidArgument on t < 1,
/// k > E, or a placement that does not match the router.
RoutedStep route_tokens(std::size_t tokens, const RouterModel& router, const Placement& placement,
                        std::uint64_t seed, std::int64_t step = 0);

enum class PlacementKind { block, round_robin, random };

struct PlacementScheme {
  PlacementKind kind = PlacementKind::block;
  std::uint64_t seed = 0;  // random only
};

PlacementScheme parse_placement_scheme(std::string_view text, std::uint64_t seed);
std::string to_string(PlacementKind kind);

/// block: contiguous E/P chunks. round_robin: expert l -> l mod p.
/// random: block layout shuffled by Fisher-Yates over SplitMix64(seed).
Placement make_placement(int e, int p, const PlacementScheme& scheme);

/// Global permutation of a token stream: Fisher-Yates over SplitMix64(seed).
std::vector<std::int64_t> shuffle_stream(std::span<const std::int64_t> token_ids, std::uint64_t seed);

/// sigma: Fisher-Yates permutation of [0, vocab_size) over SplitMix64(seed).
std::vector<std::int64_t> vocab_permutation(std::int64_t vocab_size, std::uint64_t seed);

/// output[i] = sigma(input[i]). Throws InvalidArgument on an id outside
/// [0, vocab_size).
std::vector<std::int64_t> remap_vocab(std::span<const std::int64_t> token_ids, std::int64_t vocab_size,
                                      std::uint64_t seed);
std::vector<std::int64_t> unmap_vocab(std::span<const std::int64_t> token_ids, std::int64_t vocab_size,
                                      std::uint64_t seed);

/// Uniform-random ids in [0, vocab_size) from SplitMix64(seed).
std::vector<std::int64_t> mock_stream(std::size_t length, std::int64_t vocab_size, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Presets

enum class Preset { resilient_real, resilient_mock, persistent_real, persistent_mock, mixed_real, mixed_mock };

struct GiniBand {
  double lo = 0.0;
  double hi = 1.0;
  double centre() const { return 0.5 * (lo + hi); }
  bool contains(double g) const { return g >= lo && g <= hi; }
};

struct PresetParams {
  Preset label;
  double alpha;                        // popularity concentration
  std::optional<DriftSchedule> drift;  // set for the mock presets
  GiniBand band;                       // target per-rank Gini at reference scale
};

/// Scale at which preset bands are defined.
struct ReferenceScale {
  int experts = 128;
  int topk = 8;
  int ranks = 16;
  std::size_t tokens = 650'000;
};

PresetParams preset(Preset label);
Preset parse_preset(std::string_view text);
std::string to_string(Preset label);
std::span<const Preset> all_presets();

/// Router for a preset: popularity ~ Dir(alpha) drawn with
/// derive_seed(seed, "popularity"). Drift is dropped when with_drift is
/// false.
RouterModel make_router(const PresetParams& params, int experts, int topk, std::uint64_t seed,
                        bool with_drift = true);

/// Mean per-rank Gini of route_tokens over `runs` seeds at the given
/// scale with block placement, each run with its own popularity draw.
/// Drift is not applied (step 0).
std::vector<double> preset_gini_runs(double alpha, const ReferenceScale& scale, int runs,
                                     std::uint64_t seed);

/// Bisection on log(alpha) until the mean over `runs` seeded runs hits
/// target_gini within tol. Gini decreases monotonically in alpha.
double calibrate_alpha(double target_gini, const ReferenceScale& scale, int runs, std::uint64_t seed,
                       double tol = 2e-3);

}  // namespace moeskew
