// SPDX-License-Identifier: Apache-2.0

#include "moeskew/analysis.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "moeskew/comm_model.hpp"
#include "moeskew/error.hpp"
#include "moeskew/parallel.hpp"
#include "moeskew/rng.hpp"

namespace moeskew {

// ---------------------------------------------------------------------------
// Labels

namespace {

constexpr std::array<Architecture, 5> kArchitectures = {Architecture::mha, Architecture::mla, Architecture::gqa,
                                                       Architecture::mamba2, Architecture::gdn};
constexpr std::array<Condition, 6> kConditions = {Condition::mock,    Condition::shuffled, Condition::remapped,
                                                 Condition::romansh, Condition::opus,     Condition::wikitext};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace

std::span<const Architecture> all_architectures() { return kArchitectures; }
std::span<const Condition> all_conditions() { return kConditions; }

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::mha: return "mha";
    case Architecture::mla: return "mla";
    case Architecture::gqa: return "gqa";
    case Architecture::mamba2: return "mamba2";
    case Architecture::gdn: return "gdn";
  }
  return "?";
}

std::string to_string(Condition c) {
  switch (c) {
    case Condition::mock: return "mock";
    case Condition::shuffled: return "shuffled";
    case Condition::remapped: return "remapped";
    case Condition::romansh: return "romansh";
    case Condition::opus: return "opus";
    case Condition::wikitext: return "wikitext";
  }
  return "?";
}

std::string display_name(Architecture a) {
  switch (a) {
    case Architecture::mha: return "MHA";
    case Architecture::mla: return "MLA";
    case Architecture::gqa: return "GQA";
    case Architecture::mamba2: return "Mamba-2";
    case Architecture::gdn: return "GDN";
  }
  return "?";
}

std::string display_name(Condition c) {
  switch (c) {
    case Condition::mock: return "Mock";
    case Condition::shuffled: return "Shuffled";
    case Condition::remapped: return "Remapped";
    case Condition::romansh: return "Romansh";
    case Condition::opus: return "Opus";
    case Condition::wikitext: return "Wikitext";
  }
  return "?";
}

Architecture parse_architecture(std::string_view text) {
  const auto t = lower(text);
  for (auto a : kArchitectures) {
    if (t == to_string(a) || t == lower(display_name(a))) return a;
  }
  throw InvalidArgument(fmt::format("unknown architecture \"{}\" (mha, mla, gqa, mamba2, gdn)", text));
}

Condition parse_condition(std::string_view text) {
  const auto t = lower(text);
  for (auto c : kConditions) {
    if (t == to_string(c)) return c;
  }
  throw InvalidArgument(
      fmt::format("unknown condition \"{}\" (mock, shuffled, remapped, romansh, opus, wikitext)", text));
}

bool is_real(Condition c) {
  return c == Condition::romansh || c == Condition::opus || c == Condition::wikitext;
}

ArchitectureShape architecture_shape(Architecture a) {
  if (a == Architecture::mha || a == Architecture::mla) return {64, 6};
  return {128, 8};
}

// ---------------------------------------------------------------------------
// EP scan

namespace {

struct ScanSample {
  double expert_max_mean = 0.0;
  double rank_max_mean = 0.0;
  double gini = 0.0;
};

ScanSample scan_sample(const std::pair<SendCounts, ExpertLoads>& routed) {
  const auto c = rank_loads_from(routed.first);
  return {max_mean(routed.second.counts), max_mean(c.counts), gini(c.counts)};
}

}  // namespace

EpScanResult ep_scan(const RouterModel& router, const EpScanConfig& config, std::uint64_t seed) {
  router.validate();
  if (config.p_list.empty()) throw InvalidArgument("ep_scan: empty rank list");
  if (config.window.measure < 1 || config.window.warmup < 0) {
    throw InvalidArgument(fmt::format("ep_scan: window ({}, {}) has no measurement steps", config.window.warmup,
                                      config.window.measure));
  }
  if (config.tokens_per_step < 1) throw InvalidArgument("ep_scan: tokens_per_step must be at least 1");
  std::vector<Placement> placements;
  for (int p : config.p_list) {
    if (p < 1 || router.experts % p != 0) {
      throw InvalidArgument(fmt::format("ep_scan: {} experts do not divide over {} ranks", router.experts, p));
    }
    placements.push_back(make_placement(router.experts, p, config.placement));
  }

  const auto np = placements.size();
  const auto warmup = static_cast<std::size_t>(config.window.warmup);
  const auto measure = static_cast<std::size_t>(config.window.measure);
  const auto steps = warmup + measure;
  std::vector<std::vector<ScanSample>> samples(np, std::vector<ScanSample>(measure));
  bool identical = config.mode == ScanMode::fixed;

  if (config.mode == ScanMode::fixed) {
    std::vector<char> same(steps, 1);
    parallel_for(steps, [&](std::size_t s) {
      const auto step = static_cast<std::int64_t>(s);
      const auto pi = popularity_at(router, step, seed);
      const auto choices =
          sample_expert_choices(config.tokens_per_step, pi, router.topk, derive_seed(seed, "scan-tokens", {s}));
      std::optional<ExpertLoads> first;
      for (std::size_t q = 0; q < np; ++q) {
        const auto routed = dispatch_counts(choices, router.topk, placements[q]);
        if (!first) {
          first = routed.second;
        } else if (!(routed.second == *first)) {
          same[s] = 0;
        }
        if (s >= warmup) samples[q][s - warmup] = scan_sample(routed);
      }
    });
    identical = std::all_of(same.begin(), same.end(), [](char c) { return c != 0; });
  } else {
    parallel_for(np * steps, [&](std::size_t item) {
      const auto q = item / steps;
      const auto s = item % steps;
      const auto p = static_cast<std::uint64_t>(config.p_list[q]);
      const auto pi = popularity_at(router, static_cast<std::int64_t>(s), seed);
      const auto choices =
          sample_expert_choices(config.tokens_per_step, pi, router.topk, derive_seed(seed, "scan-tokens", {p, s}));
      const auto routed = dispatch_counts(choices, router.topk, placements[q]);
      if (s >= warmup) samples[q][s - warmup] = scan_sample(routed);
    });
  }

  EpScanResult result;
  result.loads_identical = identical;
  std::vector<double> means;
  for (std::size_t q = 0; q < np; ++q) {
    std::vector<double> em, rm, g;
    for (const auto& x : samples[q]) {
      em.push_back(x.expert_max_mean);
      rm.push_back(x.rank_max_mean);
      g.push_back(x.gini);
    }
    EpScanPoint point{config.p_list[q], summarize(em), summarize(rm), summarize(g)};
    means.push_back(point.expert_max_mean.mean);
    result.points.push_back(point);
  }
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  result.flatness_pct = (*hi - *lo) / *lo * 100.0;
  return result;
}

// ---------------------------------------------------------------------------
// Correlation

namespace {

struct Moments {
  long double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
};

Moments moments(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw InvalidArgument(fmt::format("pearson: lengths differ ({} vs {})", x.size(), y.size()));
  }
  if (x.size() < 2) throw InvalidArgument(fmt::format("pearson: need at least 2 points, got {}", x.size()));
  Moments m;
  const auto n = static_cast<long double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.mx += x[i];
    m.my += y[i];
  }
  m.mx /= n;
  m.my /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double dx = x[i] - m.mx;
    const long double dy = y[i] - m.my;
    m.sxx += dx * dx;
    m.syy += dy * dy;
    m.sxy += dx * dy;
  }
  if (m.sxx == 0.0L || m.syy == 0.0L) throw InvalidArgument("pearson: zero-variance input (r undefined)");
  return m;
}

double r_from(const Moments& m) {
  const auto r = static_cast<double>(m.sxy / std::sqrt(m.sxx * m.syy));
  return std::clamp(r, -1.0, 1.0);
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) { return r_from(moments(x, y)); }

LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
  const auto m = moments(x, y);
  LinearFit fit;
  fit.slope = static_cast<double>(m.sxy / m.sxx);
  fit.intercept = static_cast<double>(m.my - m.sxy / m.sxx * m.mx);
  fit.r = r_from(m);
  return fit;
}

CorrelationResult gini_latency_correlation(std::span<const CellResult> cells, std::size_t min_group_cells) {
  CorrelationResult out;
  std::vector<double> gx, py;
  for (const auto& c : cells) {
    if (!c.p99_ms) {
      throw InvalidArgument(fmt::format("correlation: cell ({}, {}) has no P99", to_string(c.architecture),
                                        to_string(c.condition)));
    }
    gx.push_back(c.gini.mean);
    py.push_back(*c.p99_ms);
  }
  for (auto a : kArchitectures) {
    std::vector<double> x, y;
    for (const auto& c : cells) {
      if (c.architecture != a) continue;
      x.push_back(c.gini.mean);
      y.push_back(*c.p99_ms);
    }
    if (x.empty()) continue;
    if (x.size() < min_group_cells) {
      throw InvalidArgument(fmt::format("correlation: architecture {} has {} cells, need at least {}", to_string(a),
                                        x.size(), min_group_cells));
    }
    out.groups.push_back({a, x.size(), least_squares(x, y)});
  }
  if (out.groups.empty()) throw InvalidArgument("correlation: no cells");
  out.pooled_r = pearson(gx, py);
  out.cells = gx.size();
  return out;
}

PermutationNull permutation_null(std::span<const double> x, std::span<const double> y, std::size_t permutations,
                                 std::uint64_t seed, double bound) {
  if (permutations < 1) throw InvalidArgument("permutation_null: need at least one permutation");
  PermutationNull out;
  out.observed_r = pearson(x, y);
  out.permutations = permutations;
  out.bound = bound;
  std::vector<double> rs(permutations);
  parallel_for(permutations, [&](std::size_t i) {
    std::vector<double> shuffled(y.begin(), y.end());
    SplitMix64 gen(derive_seed(seed, "permutation", {i}));
    fisher_yates(std::span<double>(shuffled), gen);
    rs[i] = pearson(x, shuffled);
  });
  out.null_mean = std::accumulate(rs.begin(), rs.end(), 0.0) / static_cast<double>(permutations);
  out.null_lo = nearest_rank_percentile(rs, 0.005);
  out.null_hi = nearest_rank_percentile(rs, 0.995);
  const auto within = std::count_if(rs.begin(), rs.end(), [&](double r) { return std::fabs(r) < bound; });
  out.fraction_within = static_cast<double>(within) / static_cast<double>(permutations);
  return out;
}

// ---------------------------------------------------------------------------
// Trace summaries

namespace {

std::string record_context(const StepRecord& r) { return fmt::format("record (step {}, layer {})", r.step, r.layer); }

}  // namespace

std::vector<StepMetrics> step_metrics(const DispatchTrace& trace, const TraceSummaryOptions& options) {
  const auto& meta = trace.metadata;
  const auto bpt = static_cast<double>(meta.bytes_per_token());
  if (options.topology && !(bpt > 0.0)) {
    throw InvalidArgument("modelled timing needs hidden and bytes_per_elem in the trace metadata");
  }
  std::vector<StepMetrics> out(trace.records.size());
  parallel_for(trace.records.size(), [&](std::size_t i) {
    const auto& rec = trace.records[i];
    try {
      StepMetrics m;
      m.step = rec.step;
      m.layer = rec.layer;
      const auto c = rank_loads_from(rec.send_counts);
      m.gini = gini(c.counts);
      m.alpha = dirichlet_alpha(proportions(c.counts));
      m.rank_max_mean = max_mean(c.counts);
      if (rec.expert_loads) m.expert_max_mean = max_mean(rec.expert_loads->counts);
      if (rec.rank_dispatch_ms) {
        m.system_ms = *std::max_element(rec.rank_dispatch_ms->begin(), rec.rank_dispatch_ms->end());
      } else if (options.topology) {
        m.system_ms = completion_time(rec.send_counts, *options.topology, bpt).system_time * 1e3;
      }
      out[i] = m;
    } catch (const Error& e) {
      throw DataError(fmt::format("{}: {}", record_context(rec), e.what()));
    }
  });
  return out;
}

WindowSummary summarize_window(const DispatchTrace& trace, const TraceSummaryOptions& options) {
  if (trace.records.empty()) throw InvalidArgument("trace has no records");
  const auto steps = step_metrics(trace, options);
  WindowSummary w;
  w.records = steps.size();

  if (options.gini_mode == GiniMode::per_step) {
    std::vector<double> g;
    for (const auto& m : steps) g.push_back(m.gini);
    w.gini = summarize(g);
  } else {
    std::vector<Count> pooled(static_cast<std::size_t>(trace.metadata.ep), 0);
    for (const auto& rec : trace.records) {
      const auto rl = rank_loads_from(rec.send_counts);
      for (std::size_t j = 0; j < pooled.size(); ++j) pooled[j] += rl.counts[j];
    }
    const double g = gini(pooled);
    w.gini = summarize(std::span<const double>(&g, 1));
  }

  std::vector<double> alphas, em;
  std::vector<std::vector<double>> props;
  for (const auto& m : steps) {
    if (std::isfinite(m.alpha)) alphas.push_back(m.alpha);
    if (m.expert_max_mean) em.push_back(*m.expert_max_mean);
  }
  for (const auto& rec : trace.records) props.push_back(proportions(rank_loads_from(rec.send_counts).counts));
  if (!alphas.empty()) w.alpha = summarize(alphas);
  w.alpha_pooled = dirichlet_alpha_pooled(props);
  if (em.size() == steps.size()) w.max_mean = summarize(em);

  const bool timed = std::all_of(steps.begin(), steps.end(), [](const StepMetrics& m) { return m.system_ms; });
  if (timed) {
    if (options.p99_pooling == P99Pooling::records) {
      std::vector<double> t;
      for (const auto& m : steps) t.push_back(*m.system_ms);
      w.p99_ms = nearest_rank_percentile(t, 0.99);
    } else {
      std::map<int, std::vector<double>> by_layer;
      for (const auto& m : steps) by_layer[m.layer].push_back(*m.system_ms);
      double sum = 0.0;
      for (const auto& [layer, t] : by_layer) sum += nearest_rank_percentile(t, 0.99);
      w.p99_ms = sum / static_cast<double>(by_layer.size());
    }
  }
  return w;
}

CellResult summarize_trace(const DispatchTrace& trace, Architecture a, Condition c,
                           const TraceSummaryOptions& options) {
  if (trace.records.empty()) {
    throw InvalidArgument(fmt::format("cell ({}, {}): trace has no records", to_string(a), to_string(c)));
  }
  const auto w = summarize_window(trace, options);
  CellResult cell;
  cell.architecture = a;
  cell.condition = c;
  cell.gini = w.gini;
  cell.alpha = w.alpha;
  cell.max_mean = w.max_mean;
  cell.p99_ms = w.p99_ms;
  return cell;
}

// ---------------------------------------------------------------------------
// Temporal stability and depth

namespace {

struct LayerSeries {
  std::vector<std::int64_t> steps;          // ascending
  std::vector<std::vector<double>> loads;   // parallel to steps
};

std::map<int, LayerSeries> layer_series(const DispatchTrace& trace) {
  std::map<int, std::vector<const StepRecord*>> by_layer;
  for (const auto& rec : trace.records) {
    if (!rec.expert_loads) throw DataError(fmt::format("lag correlation: {} has no expert_loads", record_context(rec)));
    by_layer[rec.layer].push_back(&rec);
  }
  std::map<int, LayerSeries> out;
  for (auto& [layer, recs] : by_layer) {
    std::sort(recs.begin(), recs.end(), [](const StepRecord* a, const StepRecord* b) { return a->step < b->step; });
    auto& s = out[layer];
    for (const auto* r : recs) {
      s.steps.push_back(r->step);
      s.loads.emplace_back(r->expert_loads->counts.begin(), r->expert_loads->counts.end());
    }
  }
  return out;
}

// Index pairs (a, b) with steps[b] - steps[a] == lag.
std::vector<std::pair<std::size_t, std::size_t>> lag_pairs(const std::vector<std::int64_t>& steps, int lag) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t b = 0;
  for (std::size_t a = 0; a < steps.size(); ++a) {
    while (b < steps.size() && steps[b] < steps[a] + lag) ++b;
    if (b < steps.size() && steps[b] == steps[a] + lag) out.emplace_back(a, b);
  }
  return out;
}

void check_lag_inputs(const std::map<int, LayerSeries>& series, int max_lag) {
  if (max_lag < 1) throw InvalidArgument(fmt::format("lag correlation: max lag must be >= 1, got {}", max_lag));
  if (series.empty()) throw InvalidArgument("lag correlation: trace has no records");
  for (const auto& [layer, s] : series) {
    if (s.steps.size() < static_cast<std::size_t>(max_lag) + 1) {
      throw InvalidArgument(fmt::format("lag correlation: layer {} has {} steps, need at least {}", layer,
                                        s.steps.size(), max_lag + 1));
    }
  }
}

// Step-by-step correlation matrix of one layer's loads.
std::vector<double> correlation_matrix(int layer, const LayerSeries& s) {
  const auto n = s.steps.size();
  std::vector<double> c(n * n, 1.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      try {
        c[a * n + b] = c[b * n + a] = pearson(s.loads[a], s.loads[b]);
      } catch (const InvalidArgument&) {
        throw DataError(fmt::format("lag correlation: layer {} has constant expert loads at step {} or {}", layer,
                                    s.steps[a], s.steps[b]));
      }
    }
  }
  return c;
}

// r(1..max_lag) averaged over layers, with rows of each layer's
// correlation matrix read through order (identity for the observed value).
std::vector<double> lag_curve(const std::vector<std::vector<double>>& matrices,
                              const std::vector<const LayerSeries*>& series,
                              const std::vector<std::vector<std::size_t>>& order, int max_lag) {
  std::vector<double> out(static_cast<std::size_t>(max_lag), 0.0);
  for (int lag = 1; lag <= max_lag; ++lag) {
    double sum = 0.0;
    for (std::size_t l = 0; l < series.size(); ++l) {
      const auto pairs = lag_pairs(series[l]->steps, lag);
      if (pairs.empty()) {
        throw DataError(fmt::format("lag correlation: no step pairs {} apart in some layer", lag));
      }
      const auto n = series[l]->steps.size();
      double layer_sum = 0.0;
      for (const auto& [a, b] : pairs) layer_sum += matrices[l][order[l][a] * n + order[l][b]];
      sum += layer_sum / static_cast<double>(pairs.size());
    }
    out[static_cast<std::size_t>(lag - 1)] = sum / static_cast<double>(series.size());
  }
  return out;
}

}  // namespace

std::vector<double> lag_correlation(const DispatchTrace& trace, int max_lag) {
  const auto series = layer_series(trace);
  check_lag_inputs(series, max_lag);
  std::vector<std::vector<double>> matrices;
  std::vector<const LayerSeries*> ptrs;
  std::vector<std::vector<std::size_t>> identity;
  for (const auto& [layer, s] : series) {
    matrices.push_back(correlation_matrix(layer, s));
    ptrs.push_back(&s);
    identity.emplace_back(s.steps.size());
    std::iota(identity.back().begin(), identity.back().end(), std::size_t{0});
  }
  return lag_curve(matrices, ptrs, identity, max_lag);
}

LagEnvelope lag_null_envelope(const DispatchTrace& trace, int max_lag, std::size_t permutations,
                              std::uint64_t seed) {
  if (permutations < 1) throw InvalidArgument("lag null: need at least one permutation");
  const auto series = layer_series(trace);
  check_lag_inputs(series, max_lag);
  std::vector<std::vector<double>> matrices;
  std::vector<const LayerSeries*> ptrs;
  for (const auto& [layer, s] : series) {
    matrices.push_back(correlation_matrix(layer, s));
    ptrs.push_back(&s);
  }
  std::vector<std::vector<double>> curves(permutations);
  parallel_for(permutations, [&](std::size_t i) {
    std::vector<std::vector<std::size_t>> order;
    for (std::size_t l = 0; l < ptrs.size(); ++l) {
      order.emplace_back(ptrs[l]->steps.size());
      std::iota(order.back().begin(), order.back().end(), std::size_t{0});
      SplitMix64 gen(derive_seed(seed, "lag-permutation", {i, l}));
      fisher_yates(std::span<std::size_t>(order.back()), gen);
    }
    curves[i] = lag_curve(matrices, ptrs, order, max_lag);
  });
  LagEnvelope env;
  for (int lag = 0; lag < max_lag; ++lag) {
    std::vector<double> v;
    for (const auto& c : curves) v.push_back(c[static_cast<std::size_t>(lag)]);
    env.lo.push_back(nearest_rank_percentile(v, 0.005));
    env.hi.push_back(nearest_rank_percentile(v, 0.995));
  }
  return env;
}

DepthProfile depth_profile(const DispatchTrace& trace) {
  if (trace.records.empty()) throw InvalidArgument("depth profile: trace has no records");
  std::vector<double> g(trace.records.size());
  parallel_for(trace.records.size(), [&](std::size_t i) {
    const auto& rec = trace.records[i];
    try {
      g[i] = gini(rank_loads_from(rec.send_counts).counts);
    } catch (const Error& e) {
      throw DataError(fmt::format("{}: {}", record_context(rec), e.what()));
    }
  });
  std::map<int, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto& [sum, n] = acc[trace.records[i].layer];
    sum += g[i];
    ++n;
  }
  DepthProfile out;
  const auto layers = static_cast<double>(acc.size());
  for (const auto& [layer, sn] : acc) {
    out.layers.push_back(layer);
    out.mean_gini.push_back(sn.first / static_cast<double>(sn.second));
    out.depth_fraction.push_back(static_cast<double>(out.layers.size()) / layers);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classification and factorial aggregation

std::string to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::data_resilient: return "data_resilient";
    case ClassLabel::persistently_concentrated: return "persistently_concentrated";
    case ClassLabel::mixed: return "mixed";
  }
  return "?";
}

ClassLabel classify(double mock_gini, double real_gini, const ClassThresholds& t) {
  if (!std::isfinite(mock_gini) || !std::isfinite(real_gini) || mock_gini < 0.0 || real_gini < 0.0) {
    throw InvalidArgument(fmt::format("classify: Gini values must be finite and >= 0, got mock {} real {}",
                                      mock_gini, real_gini));
  }
  if (real_gini == 0.0) return mock_gini > 0.0 ? ClassLabel::data_resilient : ClassLabel::mixed;
  const double ratio = mock_gini / real_gini;
  if (real_gini < t.resilient_real_max && ratio >= t.resilient_ratio_min) return ClassLabel::data_resilient;
  if (real_gini > t.persistent_real_min && ratio < t.persistent_ratio_max) {
    return ClassLabel::persistently_concentrated;
  }
  return ClassLabel::mixed;
}

const CellResult* FactorialMatrix::find(Architecture a, Condition c) const {
  const auto it = cells.find({a, c});
  return it == cells.end() ? nullptr : &it->second;
}

FactorialMatrix factorial_aggregate(std::span<const CellResult> cells, const ClassThresholds& t) {
  if (cells.empty()) throw InvalidArgument("factorial: no cells");
  FactorialMatrix m;
  for (const auto& c : cells) {
    if (!m.cells.emplace(std::pair{c.architecture, c.condition}, c).second) {
      throw InvalidArgument(
          fmt::format("factorial: duplicate cell ({}, {})", to_string(c.architecture), to_string(c.condition)));
    }
  }
  for (auto a : kArchitectures) {
    if (std::any_of(cells.begin(), cells.end(), [&](const CellResult& c) { return c.architecture == a; })) {
      m.rows.push_back(a);
    }
  }
  for (auto c : kConditions) {
    if (std::any_of(cells.begin(), cells.end(), [&](const CellResult& x) { return x.condition == c; })) {
      m.columns.push_back(c);
    }
  }
  for (auto a : m.rows) {
    ArchitectureRow row{a, std::nullopt, std::nullopt, std::nullopt, false, std::nullopt};
    for (auto c : m.columns) {
      const auto* cell = m.find(a, c);
      if (!cell) continue;
      if (!row.best || cell->gini.mean < m.find(a, *row.best)->gini.mean) row.best = c;
      if (is_real(c) && (!row.best_real || cell->gini.mean < m.find(a, *row.best_real)->gini.mean)) {
        row.best_real = c;
      }
    }
    const auto* mock = m.find(a, Condition::mock);
    if (mock && row.best_real) {
      const double real = m.find(a, *row.best_real)->gini.mean;
      if (real > 0.0) row.improvement_ratio = mock->gini.mean / real;
      row.label = classify(mock->gini.mean, real, t);
    } else {
      row.missing_counterpart = true;
    }
    m.summaries.push_back(row);
  }
  return m;
}

FactorialMatrix factorial_aggregate(std::span<const LabeledTrace> traces, const TraceSummaryOptions& options,
                                    const ClassThresholds& t) {
  std::vector<CellResult> cells(traces.size());
  parallel_for(traces.size(), [&](std::size_t i) {
    cells[i] = summarize_trace(traces[i].trace, traces[i].architecture, traces[i].condition, options);
  });
  return factorial_aggregate(cells, t);
}

// ---------------------------------------------------------------------------
// Synthetic workloads

TraceMetadata resolved_metadata(const GenerateConfig& config) {
  auto meta = config.metadata;
  meta.local_tokens.reset();
  if (meta.ep > 0 && config.tokens_per_step % static_cast<std::size_t>(meta.ep) == 0) {
    meta.local_tokens = static_cast<std::int64_t>(config.tokens_per_step / static_cast<std::size_t>(meta.ep));
  }
  return meta;
}

void generate_trace(const GenerateConfig& config, std::uint64_t seed,
                    const std::function<void(const StepRecord&)>& sink) {
  const auto meta = resolved_metadata(config);
  meta.validate();
  if (config.tokens_per_step < 1) throw InvalidArgument("generate: tokens per step must be at least 1");
  if (config.steps < 0) throw InvalidArgument("generate: step count must be non-negative");
  if (config.layers < 1) throw InvalidArgument("generate: layer count must be at least 1");
  if (!config.layer_alpha.empty() && config.layer_alpha.size() != static_cast<std::size_t>(config.layers)) {
    throw InvalidArgument(fmt::format("generate: {} per-layer alphas for {} layers", config.layer_alpha.size(),
                                      config.layers));
  }
  if (config.timing_topology && config.timing_topology->p != meta.ep) {
    throw InvalidArgument(
        fmt::format("generate: timing topology has {} ranks, trace has {}", config.timing_topology->p, meta.ep));
  }
  if (config.timing_topology && meta.bytes_per_token() <= 0) {
    throw InvalidArgument("generate: modelled timing needs positive hidden and bytes_per_elem");
  }
  const auto placement = make_placement(meta.experts, meta.ep, config.placement);

  std::vector<RouterModel> routers;
  for (int l = 0; l < config.layers; ++l) {
    const double alpha = config.layer_alpha.empty() ? config.alpha : config.layer_alpha[static_cast<std::size_t>(l)];
    RouterModel r;
    r.experts = meta.experts;
    r.topk = meta.topk;
    r.popularity = sample_popularity(meta.experts, alpha, derive_seed(seed, "layer-popularity",
                                                                      {static_cast<std::uint64_t>(l)}));
    r.drift = config.drift;
    r.validate();
    routers.push_back(std::move(r));
  }

  const auto layers = static_cast<std::size_t>(config.layers);
  const auto total = static_cast<std::size_t>(config.steps) * layers;
  const std::size_t batch = std::max<std::size_t>(16, 4 * static_cast<std::size_t>(thread_count()));
  std::vector<StepRecord> buffer;
  for (std::size_t begin = 0; begin < total; begin += batch) {
    const auto n = std::min(batch, total - begin);
    buffer.assign(n, StepRecord{});
    parallel_for(n, [&](std::size_t i) {
      const auto idx = begin + i;
      const auto step = static_cast<std::int64_t>(idx / layers);
      const auto layer = idx % layers;
      const auto draw = config.resample_tokens ? step : 0;
      const auto pi =
          popularity_at(routers[layer], draw, derive_seed(seed, "layer", {static_cast<std::uint64_t>(layer)}));
      const auto choices = sample_expert_choices(
          config.tokens_per_step, pi, meta.topk,
          derive_seed(seed, "tokens", {static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(draw)}));
      auto [s, e] = dispatch_counts(choices, meta.topk, placement);
      auto& rec = buffer[i];
      rec.step = step;
      rec.layer = static_cast<int>(layer);
      if (config.timing_topology) {
        const auto report =
            completion_time(s, *config.timing_topology, static_cast<double>(meta.bytes_per_token()));
        std::vector<double> ms;
        for (double t : report.per_rank_time) ms.push_back(t * 1e3);
        rec.rank_dispatch_ms = std::move(ms);
        rec.timing_source = "model";
      }
      rec.send_counts = std::move(s);
      rec.expert_loads = std::move(e);
    });
    for (const auto& rec : buffer) sink(rec);
  }
}

DispatchTrace generate_trace(const GenerateConfig& config, std::uint64_t seed) {
  DispatchTrace trace;
  trace.metadata = resolved_metadata(config);
  generate_trace(config, seed, [&](const StepRecord& r) { trace.records.push_back(r); });
  return trace;
}

namespace {

std::int64_t synthetic_hidden(Architecture a) { return a == Architecture::mamba2 ? 2688 : 2048; }

}  // namespace

std::vector<CellResult> synthetic_cells(const SyntheticCellsConfig& config, std::uint64_t seed) {
  if (config.cells_per_architecture < 1 || config.steps < 1 || config.tokens_per_step < 1) {
    throw InvalidArgument("synthetic cells: cell, step, and token counts must be positive");
  }
  if (!(config.sharpness_min > 0.0 && config.sharpness_max >= config.sharpness_min)) {
    throw InvalidArgument("synthetic cells: need 0 < sharpness_min <= sharpness_max");
  }
  auto topo = config.topology;
  topo.p = config.ranks;
  topo.validate();

  struct Item {
    Architecture arch;
    std::size_t arch_index;
    int cell;
  };
  std::vector<Item> items;
  std::vector<std::vector<double>> bases;
  for (std::size_t ai = 0; ai < config.architectures.size(); ++ai) {
    const auto a = config.architectures[ai];
    const auto shape = architecture_shape(a);
    bases.push_back(sample_popularity(shape.experts, config.base_alpha,
                                      derive_seed(seed, "cell-base", {static_cast<std::uint64_t>(a)})));
    for (int c = 0; c < config.cells_per_architecture; ++c) items.push_back({a, ai, c});
  }

  std::vector<CellResult> out(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const auto& it = items[i];
    const auto shape = architecture_shape(it.arch);
    const double u = (it.cell + 0.5) / config.cells_per_architecture;
    const double sharpness = config.sharpness_min * std::pow(config.sharpness_max / config.sharpness_min, u);
    const auto pi = temper_popularity(bases[it.arch_index], sharpness);
    const auto placement = make_placement(shape.experts, config.ranks, {PlacementKind::block, 0});
    const double bpt = static_cast<double>(synthetic_hidden(it.arch) * 2);
    std::vector<double> g, alpha, em, ms;
    for (int s = 0; s < config.steps; ++s) {
      const auto choices = sample_expert_choices(
          config.tokens_per_step, pi, shape.topk,
          derive_seed(seed, "cell-tokens",
                      {static_cast<std::uint64_t>(it.arch), static_cast<std::uint64_t>(it.cell),
                       static_cast<std::uint64_t>(s)}));
      const auto [sc, e] = dispatch_counts(choices, shape.topk, placement);
      const auto c = rank_loads_from(sc);
      g.push_back(gini(c.counts));
      const double a = dirichlet_alpha(proportions(c.counts));
      if (std::isfinite(a)) alpha.push_back(a);
      em.push_back(max_mean(e.counts));
      ms.push_back(completion_time(sc, topo, bpt).system_time * 1e3);
    }
    CellResult cell;
    cell.architecture = it.arch;
    cell.condition = kConditions[static_cast<std::size_t>(it.cell) % kConditions.size()];
    cell.replicate = it.cell / static_cast<int>(kConditions.size());
    cell.gini = summarize(g);
    if (!alpha.empty()) cell.alpha = summarize(alpha);
    cell.max_mean = summarize(em);
    cell.p99_ms = nearest_rank_percentile(ms, 0.99);
    out[i] = cell;
  });
  return out;
}

TokenSweepResult token_sweep(const PresetParams& params, std::span<const std::size_t> token_counts,
                             const ReferenceScale& scale, int runs, std::uint64_t seed, bool with_drift) {
  if (token_counts.empty() || runs < 1) throw InvalidArgument("token sweep: need token counts and runs >= 1");
  const auto placement = make_placement(scale.experts, scale.ranks, {PlacementKind::block, 0});
  const auto nt = token_counts.size();
  const auto nr = static_cast<std::size_t>(runs);
  std::vector<std::vector<double>> pis(nr);
  for (std::size_t r = 0; r < nr; ++r) {
    const auto router = make_router(params, scale.experts, scale.topk, derive_seed(seed, "sweep-run", {r}), with_drift);
    pis[r] = popularity_at(router, 0, derive_seed(seed, "sweep-drift", {r}));
  }
  std::vector<double> g(nt * nr);
  parallel_for(nt * nr, [&](std::size_t item) {
    const auto ti = item / nr;
    const auto r = item % nr;
    const auto t = token_counts[ti];
    if (t < 1) throw InvalidArgument("token sweep: token count must be at least 1");
    const auto choices = sample_expert_choices(t, pis[r], scale.topk, derive_seed(seed, "sweep-tokens", {r, t}));
    const auto routed = dispatch_counts(choices, scale.topk, placement);
    g[item] = gini(rank_loads_from(routed.first).counts);
  });
  TokenSweepResult out;
  std::vector<double> means;
  for (std::size_t ti = 0; ti < nt; ++ti) {
    const auto s = summarize(std::span<const double>(g).subspan(ti * nr, nr));
    out.points.push_back({token_counts[ti], s});
    means.push_back(s.mean);
  }
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  out.flatness_pct = (*hi - *lo) / *lo * 100.0;
  return out;
}

}  // namespace moeskew
