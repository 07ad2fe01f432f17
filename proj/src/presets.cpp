// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <cmath>

#include <fmt/format.h>

#include "moeskew/error.hpp"
#include "moeskew/metrics.hpp"
#include "moeskew/rng.hpp"
#include "moeskew/workload.hpp"

namespace moeskew {

namespace {

// Concentrations found by tools/calibrate_presets (seed 2024, 20 runs at
// the reference scale, target = band centre). Re-run the tool after any
// change to the sampler.
constexpr double kResilientRealAlpha = 2.247;
constexpr double kResilientMockAlpha = 0.5523;
constexpr double kPersistentRealAlpha = 0.3786;
constexpr double kPersistentMockAlpha = 0.2134;
constexpr double kMixedRealAlpha = 0.5233;
constexpr double kMixedMockAlpha = 0.2091;

// Mock presets resample popularity every step and sharpen it fourfold over
// the first 250 steps.
DriftSchedule mock_drift(double alpha) { return DriftSchedule{alpha, alpha / 4.0, 250}; }

constexpr std::array<Preset, 6> kAll = {Preset::resilient_real, Preset::resilient_mock,
                                        Preset::persistent_real, Preset::persistent_mock,
                                        Preset::mixed_real, Preset::mixed_mock};

}  // namespace

PresetParams preset(Preset label) {
  switch (label) {
    case Preset::resilient_real:
      return {label, kResilientRealAlpha, std::nullopt, {0.10, 0.15}};
    case Preset::resilient_mock:
      return {label, kResilientMockAlpha, mock_drift(kResilientMockAlpha), {0.22, 0.25}};
    case Preset::persistent_real:
      return {label, kPersistentRealAlpha, std::nullopt, {0.24, 0.29}};
    case Preset::persistent_mock:
      return {label, kPersistentMockAlpha, mock_drift(kPersistentMockAlpha), {0.29, 0.38}};
    case Preset::mixed_real:
      return {label, kMixedRealAlpha, std::nullopt, {0.22, 0.26}};
    case Preset::mixed_mock:
      return {label, kMixedMockAlpha, mock_drift(kMixedMockAlpha), {0.32, 0.36}};
  }
  throw InvalidArgument("unknown preset");
}

std::span<const Preset> all_presets() { return kAll; }

std::string to_string(Preset label) {
  switch (label) {
    case Preset::resilient_real: return "resilient_real";
    case Preset::resilient_mock: return "resilient_mock";
    case Preset::persistent_real: return "persistent_real";
    case Preset::persistent_mock: return "persistent_mock";
    case Preset::mixed_real: return "mixed_real";
    case Preset::mixed_mock: return "mixed_mock";
  }
  return "?";
}

Preset parse_preset(std::string_view text) {
  for (auto p : kAll) {
    if (to_string(p) == text) return p;
  }
  throw InvalidArgument(fmt::format(
      "unknown preset \"{}\" (resilient_real, resilient_mock, persistent_real, persistent_mock, "
      "mixed_real, mixed_mock)",
      text));
}

RouterModel make_router(const PresetParams& params, int experts, int topk, std::uint64_t seed, bool with_drift) {
  RouterModel r;
  r.experts = experts;
  r.topk = topk;
  r.popularity = sample_popularity(experts, params.alpha, derive_seed(seed, "popularity"));
  if (with_drift) r.drift = params.drift;
  r.validate();
  return r;
}

std::vector<double> preset_gini_runs(double alpha, const ReferenceScale& scale, int runs, std::uint64_t seed) {
  const auto placement = make_placement(scale.experts, scale.ranks, {PlacementKind::block, 0});
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(runs));
  for (int r = 0; r < runs; ++r) {
    const auto run = static_cast<std::uint64_t>(r);
    const auto pi = sample_popularity(scale.experts, alpha, derive_seed(seed, "calibration-popularity", {run}));
    const auto choices =
        sample_expert_choices(scale.tokens, pi, scale.topk, derive_seed(seed, "calibration-tokens", {run}));
    const auto [s, e] = dispatch_counts(choices, scale.topk, placement);
    out.push_back(gini(rank_loads_from(s).counts));
  }
  return out;
}

double calibrate_alpha(double target_gini, const ReferenceScale& scale, int runs, std::uint64_t seed, double tol) {
  auto mean_gini = [&](double alpha) {
    const auto g = preset_gini_runs(alpha, scale, runs, seed);
    double sum = 0.0;
    for (double x : g) sum += x;
    return sum / static_cast<double>(g.size());
  };
  double lo = std::log(1e-3);  // concentrated: high Gini
  double hi = std::log(1e3);   // near uniform: low Gini
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 60; ++it) {
    mid = 0.5 * (lo + hi);
    const double g = mean_gini(std::exp(mid));
    if (std::fabs(g - target_gini) < tol) break;
    if (g > target_gini) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(mid);
}

}  // namespace moeskew
