// SPDX-License-Identifier: Apache-2.0

#include "moeskew/workload.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "moeskew/error.hpp"
#include "moeskew/parallel.hpp"
#include "moeskew/rng.hpp"

namespace moeskew {

double DriftSchedule::alpha_at(std::int64_t step) const {
  if (ramp_steps <= 0 || step >= ramp_steps) return alpha_end;
  if (step <= 0) return alpha_start;
  const double f = static_cast<double>(step) / static_cast<double>(ramp_steps);
  return std::exp(std::log(alpha_start) + f * (std::log(alpha_end) - std::log(alpha_start)));
}

void RouterModel::validate() const {
  if (experts < 1) throw InvalidArgument(fmt::format("router: expert count must be positive, got {}", experts));
  if (topk < 1 || topk > experts) {
    throw InvalidArgument(fmt::format("router: top-k {} outside [1, E={}]", topk, experts));
  }
  if (static_cast<int>(popularity.size()) != experts) {
    throw InvalidArgument(
        fmt::format("router: popularity has {} entries, expected {}", popularity.size(), experts));
  }
  double sum = 0.0;
  for (double x : popularity) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidArgument("router: popularity entries must be >= 0");
    sum += x;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw InvalidArgument(fmt::format("router: popularity sums to {}", sum));
  if (drift && (!(drift->alpha_start > 0.0) || !(drift->alpha_end > 0.0))) {
    throw InvalidArgument("router: drift concentrations must be positive");
  }
}

std::vector<double> popularity_at(const RouterModel& router, std::int64_t step, std::uint64_t seed) {
  if (!router.drift) return router.popularity;
  return sample_popularity(router.experts, router.drift->alpha_at(step),
                           derive_seed(seed, "drift", {static_cast<std::uint64_t>(step)}));
}

std::vector<double> sample_popularity(int e, double alpha, std::uint64_t seed) {
  if (e < 1) throw InvalidArgument(fmt::format("sample_popularity: expert count must be positive, got {}", e));
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw InvalidArgument(fmt::format("sample_popularity: alpha must be positive and finite, got {}", alpha));
  }
  std::mt19937_64 gen(seed);
  std::vector<double> log_g(static_cast<std::size_t>(e));
  if (alpha >= 1.0) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    for (auto& v : log_g) v = std::log(gamma(gen));
  } else {
    // G(alpha) = G(alpha + 1) * U^(1/alpha)
    std::gamma_distribution<double> gamma(alpha + 1.0, 1.0);
    for (auto& v : log_g) v = std::log(gamma(gen)) + std::log(uniform_open01(gen)) / alpha;
  }
  const double top = *std::max_element(log_g.begin(), log_g.end());
  std::vector<double> pi(log_g.size());
  double sum = 0.0;
  for (std::size_t l = 0; l < pi.size(); ++l) sum += (pi[l] = std::exp(log_g[l] - top));
  for (auto& v : pi) v /= sum;
  return pi;
}

std::vector<double> temper_popularity(std::span<const double> popularity, double sharpness) {
  if (!(sharpness > 0.0) || !std::isfinite(sharpness)) {
    throw InvalidArgument(fmt::format("temper_popularity: sharpness must be positive, got {}", sharpness));
  }
  std::vector<double> logs(popularity.size(), -std::numeric_limits<double>::infinity());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < popularity.size(); ++l) {
    if (popularity[l] > 0.0) {
      logs[l] = sharpness * std::log(popularity[l]);
      top = std::max(top, logs[l]);
    }
  }
  if (!std::isfinite(top)) throw InvalidArgument("temper_popularity: all-zero popularity");
  std::vector<double> out(popularity.size());
  double sum = 0.0;
  for (std::size_t l = 0; l < out.size(); ++l) sum += (out[l] = std::exp(logs[l] - top));
  for (auto& v : out) v /= sum;
  return out;
}

namespace {

constexpr std::size_t kTokenBlock = 4096;

// Successive sampling without replacement. Each pick first tries the
// alias table with rejection of taken experts (exact for the conditional
// law); once the taken mass is large or rejection keeps failing it falls
// back to a linear scan over the remaining weight.
class SuccessiveSampler {
public:
  explicit SuccessiveSampler(std::span<const double> popularity)
      : weight_(popularity.begin(), popularity.end()),
        prob_(popularity.size()),
        alias_(popularity.size()),
        taken_(popularity.size(), 0) {
    const double sum = std::accumulate(weight_.begin(), weight_.end(), 0.0);
    if (!(sum > 0.0)) throw InvalidArgument("sampler: popularity has no positive weight");
    for (auto& w : weight_) w /= sum;
    build_alias();
    order_.resize(weight_.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(), [this](int a, int b) {
      return weight_[static_cast<std::size_t>(a)] > weight_[static_cast<std::size_t>(b)];
    });
  }

  template <class Gen>
  void draw(Gen& gen, int k, int* out) {
    double taken_mass = 0.0;
    for (int pick = 0; pick < k; ++pick) {
      int x = -1;
      if (taken_mass < 0.5) {
        for (int tries = 0; tries < 32; ++tries) {
          const int c = alias_draw(gen);
          if (!taken_[static_cast<std::size_t>(c)]) {
            x = c;
            break;
          }
        }
      }
      if (x < 0) x = linear_draw(gen, out, pick);
      taken_[static_cast<std::size_t>(x)] = 1;
      taken_mass += weight_[static_cast<std::size_t>(x)];
      out[pick] = x;
    }
    for (int pick = 0; pick < k; ++pick) taken_[static_cast<std::size_t>(out[pick])] = 0;
  }

private:
  void build_alias() {
    const std::size_t n = weight_.size();
    std::vector<double> scaled(n);
    std::vector<std::size_t> small;
    std::vector<std::size_t> large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = weight_[i] * static_cast<double>(n);
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      const auto s = small.back();
      small.pop_back();
      const auto l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = static_cast<int>(l);
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (auto i : large) {
      prob_[i] = 1.0;
      alias_[i] = static_cast<int>(i);
    }
    // Leftovers from rounding are full columns unless they carry no weight.
    for (auto i : small) {
      prob_[i] = weight_[i] > 0.0 ? 1.0 : 0.0;
      alias_[i] = weight_[i] > 0.0 ? static_cast<int>(i) : heaviest();
    }
  }

  int heaviest() const {
    return static_cast<int>(std::max_element(weight_.begin(), weight_.end()) - weight_.begin());
  }

  template <class Gen>
  int alias_draw(Gen& gen) {
    const auto i = static_cast<std::size_t>(bounded(gen, weight_.size()));
    return uniform01(gen) < prob_[i] ? static_cast<int>(i) : alias_[i];
  }

  // Inverse-CDF walk over the untaken experts in descending weight order,
  // so concentrated popularity needs only a few steps.
  template <class Gen>
  int linear_draw(Gen& gen, const int* picked, int count) {
    double taken = 0.0;
    for (int i = 0; i < count; ++i) taken += weight_[static_cast<std::size_t>(picked[i])];
    const double remaining = 1.0 - taken;
    if (remaining > 0.0) {
      const double u = uniform01(gen) * remaining;
      double acc = 0.0;
      int last_positive = -1;
      for (int x : order_) {
        const auto i = static_cast<std::size_t>(x);
        if (weight_[i] <= 0.0) break;
        if (taken_[i]) continue;
        acc += weight_[i];
        last_positive = x;
        if (u < acc) return x;
      }
      if (last_positive >= 0) return last_positive;
    }
    // Every positive-weight expert is taken: uniform over the rest.
    std::size_t free_slots = 0;
    for (std::size_t i = 0; i < weight_.size(); ++i) free_slots += taken_[i] ? 0 : 1;
    auto idx = bounded(gen, free_slots);
    for (std::size_t i = 0; i < weight_.size(); ++i) {
      if (taken_[i]) continue;
      if (idx-- == 0) return static_cast<int>(i);
    }
    throw Error("sampler: no expert left to choose");
  }

  std::vector<double> weight_;
  std::vector<double> prob_;
  std::vector<int> alias_;
  std::vector<int> order_;  // experts by descending weight, ties by index
  std::vector<std::uint8_t> taken_;
};

}  // namespace

std::vector<int> sample_expert_choices(std::size_t tokens, std::span<const double> popularity, int topk,
                                       std::uint64_t seed) {
  if (topk < 1 || static_cast<std::size_t>(topk) > popularity.size()) {
    throw InvalidArgument(fmt::format("sample_expert_choices: top-k {} outside [1, E={}]", topk,
                                      popularity.size()));
  }
  double sum = 0.0;
  for (double w : popularity) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvalidArgument(fmt::format("sample_expert_choices: popularity entry {} is not a finite non-negative number", w));
    }
    sum += w;
  }
  if (std::fabs(sum - 1.0) > 1e-9) {
    throw InvalidArgument(fmt::format("sample_expert_choices: popularity sums to {}, expected 1", sum));
  }
  const SuccessiveSampler proto(popularity);
  const auto k = static_cast<std::size_t>(topk);
  std::vector<int> out(tokens * k);
  const std::size_t blocks = (tokens + kTokenBlock - 1) / kTokenBlock;
  parallel_for(blocks, [&](std::size_t b) {
    SuccessiveSampler sampler = proto;
    SplitMix64 gen(derive_seed(seed, "tokens", {b}));
    const std::size_t end = std::min(tokens, (b + 1) * kTokenBlock);
    for (std::size_t t = b * kTokenBlock; t < end; ++t) sampler.draw(gen, topk, out.data() + t * k);
  });
  return out;
}

std::pair<SendCounts, ExpertLoads> dispatch_counts(std::span<const int> choices, int topk,
                                                   const Placement& placement) {
  if (topk < 1 || choices.size() % static_cast<std::size_t>(topk) != 0) {
    throw InvalidArgument(fmt::format("dispatch: {} choices is not a multiple of top-k {}", choices.size(), topk));
  }
  const int p = placement.ranks();
  SendCounts s(p);
  ExpertLoads e{std::vector<Count>(static_cast<std::size_t>(placement.experts()), 0)};
  const std::size_t tokens = choices.size() / static_cast<std::size_t>(topk);
  auto rank_of = placement.expert_to_rank();
  for (std::size_t t = 0; t < tokens; ++t) {
    const int origin = static_cast<int>(t % static_cast<std::size_t>(p));
    for (int c = 0; c < topk; ++c) {
      const int x = choices[t * static_cast<std::size_t>(topk) + static_cast<std::size_t>(c)];
      if (x < 0 || x >= placement.experts()) {
        throw InvalidArgument(fmt::format("dispatch: expert {} outside placement of {}", x, placement.experts()));
      }
      ++s.at(origin, rank_of[static_cast<std::size_t>(x)]);
      ++e.counts[static_cast<std::size_t>(x)];
    }
  }
  return {std::move(s), std::move(e)};
}

RoutedStep dispatch(std::vector<int> choices, int topk, const Placement& placement) {
  auto [s, e] = dispatch_counts(choices, topk, placement);
  RoutedStep out{TokenAssignments{}, std::move(s), std::move(e)};
  const std::size_t tokens = choices.size() / static_cast<std::size_t>(topk);
  out.assignments.topk = topk;
  out.assignments.origin_rank.resize(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    out.assignments.origin_rank[t] = static_cast<int>(t % static_cast<std::size_t>(placement.ranks()));
  }
  out.assignments.experts = std::move(choices);
  return out;
}

RoutedStep route_tokens(std::size_t tokens, const RouterModel& router, const Placement& placement,
                        std::uint64_t seed, std::int64_t step) {
  if (tokens < 1) throw InvalidArgument("route_tokens: token count must be at least 1");
  router.validate();
  if (placement.experts() != router.experts) {
    throw InvalidArgument(fmt::format("route_tokens: placement covers {} experts, router has {}",
                                      placement.experts(), router.experts));
  }
  const auto pi = popularity_at(router, step, seed);
  auto choices =
      sample_expert_choices(tokens, pi, router.topk, derive_seed(seed, "route", {static_cast<std::uint64_t>(step)}));
  return dispatch(std::move(choices), router.topk, placement);
}

PlacementScheme parse_placement_scheme(std::string_view text, std::uint64_t seed) {
  if (text == "block") return {PlacementKind::block, seed};
  if (text == "round_robin" || text == "round-robin") return {PlacementKind::round_robin, seed};
  if (text == "random") return {PlacementKind::random, seed};
  throw InvalidArgument(fmt::format("unknown placement scheme \"{}\" (block, round_robin, random)", text));
}

std::string to_string(PlacementKind kind) {
  switch (kind) {
    case PlacementKind::block: return "block";
    case PlacementKind::round_robin: return "round_robin";
    case PlacementKind::random: return "random";
  }
  return "?";
}

Placement make_placement(int e, int p, const PlacementScheme& scheme) {
  if (p < 1 || e < 1 || e % p != 0) {
    throw InvalidArgument(fmt::format("make_placement: expert count {} not divisible by rank count {}", e, p));
  }
  const int per_rank = e / p;
  std::vector<int> map(static_cast<std::size_t>(e));
  for (int l = 0; l < e; ++l) {
    map[static_cast<std::size_t>(l)] = scheme.kind == PlacementKind::round_robin ? l % p : l / per_rank;
  }
  if (scheme.kind == PlacementKind::random) {
    SplitMix64 gen(scheme.seed);
    fisher_yates(std::span<int>(map), gen);
  }
  return Placement(std::move(map), p);
}

std::vector<std::int64_t> shuffle_stream(std::span<const std::int64_t> token_ids, std::uint64_t seed) {
  std::vector<std::int64_t> out(token_ids.begin(), token_ids.end());
  SplitMix64 gen(seed);
  fisher_yates(std::span<std::int64_t>(out), gen);
  return out;
}

std::vector<std::int64_t> vocab_permutation(std::int64_t vocab_size, std::uint64_t seed) {
  if (vocab_size < 1) throw InvalidArgument(fmt::format("vocab size must be positive, got {}", vocab_size));
  std::vector<std::int64_t> sigma(static_cast<std::size_t>(vocab_size));
  std::iota(sigma.begin(), sigma.end(), std::int64_t{0});
  SplitMix64 gen(seed);
  fisher_yates(std::span<std::int64_t>(sigma), gen);
  return sigma;
}

namespace {

void check_ids(std::span<const std::int64_t> ids, std::int64_t vocab_size) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab_size) {
      throw InvalidArgument(
          fmt::format("token {} at position {} outside vocabulary [0, {})", ids[i], i, vocab_size));
    }
  }
}

}  // namespace

std::vector<std::int64_t> remap_vocab(std::span<const std::int64_t> token_ids, std::int64_t vocab_size,
                                      std::uint64_t seed) {
  const auto sigma = vocab_permutation(vocab_size, seed);
  check_ids(token_ids, vocab_size);
  std::vector<std::int64_t> out(token_ids.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigma[static_cast<std::size_t>(token_ids[i])];
  return out;
}

std::vector<std::int64_t> unmap_vocab(std::span<const std::int64_t> token_ids, std::int64_t vocab_size,
                                      std::uint64_t seed) {
  const auto sigma = vocab_permutation(vocab_size, seed);
  check_ids(token_ids, vocab_size);
  std::vector<std::int64_t> inverse(sigma.size());
  for (std::size_t v = 0; v < sigma.size(); ++v) inverse[static_cast<std::size_t>(sigma[v])] = static_cast<std::int64_t>(v);
  std::vector<std::int64_t> out(token_ids.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = inverse[static_cast<std::size_t>(token_ids[i])];
  return out;
}

std::vector<std::int64_t> mock_stream(std::size_t length, std::int64_t vocab_size, std::uint64_t seed) {
  if (vocab_size < 1) throw InvalidArgument(fmt::format("vocab size must be positive, got {}", vocab_size));
  SplitMix64 gen(seed);
  std::vector<std::int64_t> out(length);
  for (auto& v : out) v = static_cast<std::int64_t>(bounded(gen, static_cast<std::uint64_t>(vocab_size)));
  return out;
}

}  // namespace moeskew
