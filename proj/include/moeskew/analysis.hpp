// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moeskew/metrics.hpp"
#include "moeskew/trace.hpp"
#include "moeskew/workload.hpp"

namespace moeskew {

// ---------------------------------------------------------------------------
// Labels

enum class Architecture { mha, mla, gqa, mamba2, gdn };
enum class Condition { mock, shuffled, remapped, romansh, opus, wikitext };

std::span<const Architecture> all_architectures();
std::span<const Condition> all_conditions();

// Short lowercase identifiers used in files and on the command line.
std::string to_string(Architecture a);
std::string to_string(Condition c);
// Human-readable labels for plots ("Mamba-2", "Wikitext").
std::string display_name(Architecture a);
std::string display_name(Condition c);

/// Accepts the identifier or the display name, case-insensitively.
Architecture parse_architecture(std::string_view text);
Condition parse_condition(std::string_view text);

/// Natural-text conditions (romansh, opus, wikitext).
bool is_real(Condition c);

/// Synthetic sizing per architecture: MHA and MLA use 64 experts, top-6;
/// the others 128 experts, top-8.
struct ArchitectureShape {
  int experts;
  int topk;
};
ArchitectureShape architecture_shape(Architecture a);

// ---------------------------------------------------------------------------
// EP scan

enum class ScanMode {
  fixed,      // one set of token choices per step, reused at every P
  resampled,  // fresh token choices per (P, step)
};

struct ScanWindow {
  int warmup = 50;
  int measure = 200;
};

struct EpScanConfig {
  std::vector<int> p_list{4, 8, 16, 32};
  PlacementScheme placement;
  ScanWindow window;
  ScanMode mode = ScanMode::resampled;
  // Tokens per step, identical at every P (GBS 32 x seqlen 4096).
  std::size_t tokens_per_step = 131'072;
};

struct EpScanPoint {
  int p = 0;
  MetricSummary expert_max_mean;  // per-expert max/mean over the window
  MetricSummary rank_max_mean;    // per-rank max/mean under the placement
  MetricSummary gini;             // per-rank Gini under the placement
};

struct EpScanResult {
  std::vector<EpScanPoint> points;
  // (max - min) / min over P of the window-mean per-expert max/mean, in %.
  double flatness_pct = 0.0;
  // In fixed mode: true when every step's ExpertLoads were bit-identical
  // across P. Always false in resampled mode.
  bool loads_identical = false;
};

/// Matched-window scan. Popularity for step s is shared by every P
/// (drift seeded by seed); token choices are seeded by (seed, step) in
/// fixed mode and by (seed, P, step) in resampled mode. Warmup steps are
/// generated and discarded. Throws InvalidArgument if some P does not
/// divide E or the measurement window is empty.
EpScanResult ep_scan(const RouterModel& router, const EpScanConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Correlation

/// Sample Pearson correlation. Throws InvalidArgument on unequal lengths,
/// n < 2, or a zero-variance argument.
double pearson(std::span<const double> x, std::span<const double> y);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r = 0.0;
};

/// Least-squares y = slope * x + intercept, with Pearson r.
LinearFit least_squares(std::span<const double> x, std::span<const double> y);

struct CellResult {
  Architecture architecture = Architecture::mha;
  Condition condition = Condition::mock;
  int replicate = 0;  // distinguishes synthetic cells sharing labels
  MetricSummary gini;
  std::optional<MetricSummary> alpha;  // finite per-step estimates only
  std::optional<MetricSummary> max_mean;
  std::optional<double> p99_ms;
};

struct GroupFit {
  Architecture architecture;
  std::size_t cells = 0;
  LinearFit fit;  // P99 (ms) against mean Gini
};

struct CorrelationResult {
  std::vector<GroupFit> groups;  // in enumeration order
  double pooled_r = 0.0;
  std::size_t cells = 0;
};

/// Within-architecture and pooled Pearson r of (mean Gini, P99). Throws
/// InvalidArgument if a cell lacks P99 or a group has fewer than
/// min_group_cells cells.
CorrelationResult gini_latency_correlation(std::span<const CellResult> cells, std::size_t min_group_cells = 3);

struct PermutationNull {
  double observed_r = 0.0;
  std::size_t permutations = 0;
  double null_mean = 0.0;
  double null_lo = 0.0;          // 0.5% quantile of permuted r
  double null_hi = 0.0;          // 99.5% quantile of permuted r
  double fraction_within = 0.0;  // share of permutations with |r| < bound
  double bound = 0.2;
};

/// Pearson r of x against random permutations of y (Fisher-Yates over
/// SplitMix64 streams derived from seed).
PermutationNull permutation_null(std::span<const double> x, std::span<const double> y, std::size_t permutations,
                                 std::uint64_t seed, double bound = 0.2);

// ---------------------------------------------------------------------------
// Trace summaries

enum class GiniMode {
  per_step,  // mean of per-record Gini
  pooled,    // Gini of rank loads summed over the window
};

enum class P99Pooling {
  records,    // one nearest-rank P99 over every record's system time
  per_layer,  // P99 within each layer, then the mean over layers
};

struct TraceSummaryOptions {
  GiniMode gini_mode = GiniMode::per_step;
  P99Pooling p99_pooling = P99Pooling::records;
  // When set and the trace has no timings, P99 comes from the completion
  // model with the trace's bytes per token.
  std::optional<TopologySpec> topology;
};

/// Per-record statistics of one dispatch.
struct StepMetrics {
  std::int64_t step = 0;
  int layer = 0;
  double gini = 0.0;
  double alpha = 0.0;  // may be +infinity
  std::optional<double> expert_max_mean;
  double rank_max_mean = 0.0;
  std::optional<double> system_ms;  // max over ranks, measured or modelled
};

std::vector<StepMetrics> step_metrics(const DispatchTrace& trace, const TraceSummaryOptions& options = {});

struct WindowSummary {
  std::size_t records = 0;
  MetricSummary gini;
  std::optional<MetricSummary> alpha;     // finite per-step estimates only
  double alpha_pooled = 0.0;              // dirichlet_alpha_pooled over records
  std::optional<MetricSummary> max_mean;  // when every record has expert loads
  std::optional<double> p99_ms;           // when every record has a system time
};

/// Throws InvalidArgument on a trace with no records.
WindowSummary summarize_window(const DispatchTrace& trace, const TraceSummaryOptions& options = {});

/// Window summary of one trace as a factorial cell. Throws InvalidArgument
/// on a trace with no records.
CellResult summarize_trace(const DispatchTrace& trace, Architecture a, Condition c,
                           const TraceSummaryOptions& options = {});

// ---------------------------------------------------------------------------
// Temporal stability and depth

/// r(l) for l = 1..max_lag: for each layer, the mean over all step pairs
/// (t, t + l) present in the trace of pearson(e_t, e_{t+l}); then the mean
/// over layers. Throws DataError if a record lacks expert loads or a
/// loads vector is constant, and InvalidArgument if any layer has fewer
/// than max_lag + 1 steps.
std::vector<double> lag_correlation(const DispatchTrace& trace, int max_lag);

struct LagEnvelope {
  std::vector<double> lo;  // 0.5% quantile per lag
  std::vector<double> hi;  // 99.5% quantile per lag
};

/// Null envelope for lag_correlation from random reorderings of each
/// layer's steps.
LagEnvelope lag_null_envelope(const DispatchTrace& trace, int max_lag, std::size_t permutations,
                              std::uint64_t seed);

struct DepthProfile {
  std::vector<int> layers;             // ascending layer index
  std::vector<double> mean_gini;       // per-step Gini averaged per layer
  std::vector<double> depth_fraction;  // (position + 1) / layer count
};

DepthProfile depth_profile(const DispatchTrace& trace);

// ---------------------------------------------------------------------------
// Classification and factorial aggregation

enum class ClassLabel { data_resilient, persistently_concentrated, mixed };
std::string to_string(ClassLabel label);

struct ClassThresholds {
  double resilient_real_max = 0.20;
  double resilient_ratio_min = 2.0;
  double persistent_real_min = 0.24;
  double persistent_ratio_max = 1.6;
};

/// data_resilient: real < resilient_real_max and mock / real >=
/// resilient_ratio_min. persistently_concentrated: real >
/// persistent_real_min and mock / real < persistent_ratio_max. Otherwise
/// mixed. real == 0 with mock > 0 is an unbounded improvement on a
/// perfectly balanced real run, so it is data_resilient; (0, 0) is mixed.
/// Throws InvalidArgument on negative or non-finite input.
ClassLabel classify(double mock_gini, double real_gini, const ClassThresholds& t = {});

struct ArchitectureRow {
  Architecture architecture;
  std::optional<Condition> best;  // lowest mean Gini in the row
  std::optional<Condition> best_real;
  std::optional<double> improvement_ratio;  // mock / best real
  bool missing_counterpart = false;         // no mock cell or no real cell
  std::optional<ClassLabel> label;
};

struct FactorialMatrix {
  std::vector<Architecture> rows;  // present architectures, enumeration order
  std::vector<Condition> columns;  // present conditions, enumeration order
  std::map<std::pair<Architecture, Condition>, CellResult> cells;
  std::vector<ArchitectureRow> summaries;  // parallel to rows

  const CellResult* find(Architecture a, Condition c) const;
};

/// Builds the matrix. Throws InvalidArgument on duplicate (architecture,
/// condition) labels or an empty input.
FactorialMatrix factorial_aggregate(std::span<const CellResult> cells, const ClassThresholds& t = {});

struct LabeledTrace {
  Architecture architecture;
  Condition condition;
  DispatchTrace trace;
};

/// Summarizes each trace (in parallel) and aggregates.
FactorialMatrix factorial_aggregate(std::span<const LabeledTrace> traces, const TraceSummaryOptions& options = {},
                                    const ClassThresholds& t = {});

// ---------------------------------------------------------------------------
// Synthetic workloads

struct GenerateConfig {
  TraceMetadata metadata;  // model, condition, ep, experts, topk, sizes
  std::size_t tokens_per_step = 65'536;
  std::int64_t steps = 10;
  int layers = 1;
  double alpha = 1.0;  // popularity concentration when layer_alpha is empty
  std::vector<double> layer_alpha;  // optional per-layer concentration
  std::optional<DriftSchedule> drift;
  PlacementScheme placement;
  // false: popularity and token choices frozen at step 0 (fixed mock
  // sequences); true: redrawn per step.
  bool resample_tokens = true;
  std::optional<TopologySpec> timing_topology;  // adds modelled rank_dispatch_ms
};

/// Metadata the generator writes: config.metadata with local_tokens set
/// to tokens_per_step / ep when that division is exact (drop-free routing
/// then holds by construction) and cleared otherwise.
TraceMetadata resolved_metadata(const GenerateConfig& config);

/// Calls sink(record) for each (step, layer) in step-major order. Records
/// for different steps are generated concurrently but delivered in order;
/// output does not depend on the thread count.
void generate_trace(const GenerateConfig& config, std::uint64_t seed,
                    const std::function<void(const StepRecord&)>& sink);
DispatchTrace generate_trace(const GenerateConfig& config, std::uint64_t seed);

struct SyntheticCellsConfig {
  std::vector<Architecture> architectures{Architecture::mha, Architecture::mla, Architecture::gqa,
                                          Architecture::mamba2, Architecture::gdn};
  int cells_per_architecture = 48;
  int ranks = 16;
  std::size_t tokens_per_step = 32'768;
  int steps = 4;
  TopologySpec topology;
  // Range of the tempering exponent applied to each architecture's base
  // popularity; cells are spread geometrically over it.
  double sharpness_min = 0.3;
  double sharpness_max = 3.0;
  double base_alpha = 0.5;
};

/// Cells whose P99 comes from the completion model. Each architecture has
/// one base popularity; its cells temper it with different exponents and
/// cycle through the conditions as labels. Hidden size differs per
/// architecture, so groups sit on different latency baselines.
std::vector<CellResult> synthetic_cells(const SyntheticCellsConfig& config, std::uint64_t seed);

struct TokenSweepPoint {
  std::size_t tokens = 0;
  MetricSummary gini;
};

struct TokenSweepResult {
  std::vector<TokenSweepPoint> points;
  double flatness_pct = 0.0;  // (max - min) / min over the mean Ginis
};

/// Per-rank Gini of a router at several token counts, runs seeds each.
/// Every run draws its own popularity (seeded per run, shared across token
/// counts) and routes at step 0 with block placement.
TokenSweepResult token_sweep(const PresetParams& params, std::span<const std::size_t> token_counts,
                             const ReferenceScale& scale, int runs, std::uint64_t seed, bool with_drift = false);

}  // namespace moeskew
