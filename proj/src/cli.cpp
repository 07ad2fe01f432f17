// SPDX-License-Identifier: Apache-2.0

#include "moeskew/cli.hpp"

#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "moeskew/analysis.hpp"
#include "moeskew/comm_model.hpp"
#include "moeskew/error.hpp"
#include "moeskew/parallel.hpp"
#include "moeskew/report.hpp"
#include "moeskew/rng.hpp"
#include "moeskew/trace_io.hpp"
#include "moeskew/workload.hpp"

namespace moeskew::cli {

namespace {

struct Global {
  std::uint64_t seed = 2024;
  unsigned threads = 0;
  int gpus_per_node = 4;
  double bw_intra_gbs = 450.0;
  double bw_inter_gbs = 25.0;
  double latency_us = 20.0;

  TopologySpec topology(int p) const {
    TopologySpec t;
    t.p = p;
    t.gpus_per_node = gpus_per_node;
    t.bw_intra = bw_intra_gbs * 1e9;
    t.bw_inter = bw_inter_gbs * 1e9;
    t.fixed_latency = latency_us * 1e-6;
    t.validate();
    return t;
  }

  Json topology_json() const {
    Json j;
    j["gpus_per_node"] = gpus_per_node;
    j["bw_intra_gbs"] = bw_intra_gbs;
    j["bw_inter_gbs"] = bw_inter_gbs;
    j["latency_us"] = latency_us;
    return j;
  }
};

struct Context {
  Global global;
  std::ostream* out = nullptr;
};

// Resolved configuration echoed into every output. Output destinations and
// the thread count are left out: neither affects any computed value.
Json base_config(const std::string& command, const Global& g) {
  Json j;
  j["tool"] = "moeskew";
  j["command"] = command;
  j["seed"] = g.seed;
  return j;
}

void emit_table(const std::string& path, const CsvTable& table, const Json& config, std::ostream& out) {
  if (path.empty() || path == "-") {
    write_csv(out, table, config);
  } else {
    write_csv(std::filesystem::path(path), table, config);
  }
}

void emit_summary(const std::string& path, const std::string& command, const Json& config, Json body) {
  if (path.empty()) return;
  Json j;
  j["schema"] = fmt::format("moeskew.{}.summary/1", command);
  j["config"] = config;
  for (auto& [k, v] : body.items()) j[k] = v;
  write_json(path, j);
}

Json summary_or_null(const std::optional<MetricSummary>& s) { return s ? to_json(*s) : Json(); }

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(format_number(v)); }

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

GiniMode parse_gini_mode(const std::string& s) { return s == "pooled" ? GiniMode::pooled : GiniMode::per_step; }
P99Pooling parse_pooling(const std::string& s) {
  return s == "per_layer" ? P99Pooling::per_layer : P99Pooling::records;
}

std::optional<DriftSchedule> parse_drift(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw InvalidArgument(fmt::format("--drift expects alpha_start,alpha_end,ramp_steps, got \"{}\"", text));
  DriftSchedule d;
  try {
    d.alpha_start = std::stod(parts[0]);
    d.alpha_end = std::stod(parts[1]);
    d.ramp_steps = std::stoll(parts[2]);
  } catch (const std::exception&) {
    throw InvalidArgument(fmt::format("--drift: cannot parse \"{}\"", text));
  }
  if (!(d.alpha_start > 0.0) || !(d.alpha_end > 0.0) || d.ramp_steps < 1) {
    throw InvalidArgument("--drift: alphas must be positive and ramp_steps at least 1");
  }
  return d;
}

Json drift_json(const std::optional<DriftSchedule>& d) {
  if (!d) return Json();
  Json j;
  j["alpha_start"] = d->alpha_start;
  j["alpha_end"] = d->alpha_end;
  j["ramp_steps"] = d->ramp_steps;
  return j;
}

// Router choice shared by generate and scan-ep.
struct RouterOptions {
  std::string preset;
  std::optional<double> alpha;
  std::string drift;
  bool no_drift = false;

  void add(CLI::App* sub) {
    auto* p = sub->add_option("--preset", preset, "Calibrated class preset")
                  ->check(CLI::IsMember({"resilient_real", "resilient_mock", "persistent_real", "persistent_mock",
                                         "mixed_real", "mixed_mock"}));
    auto* a = sub->add_option("--alpha", alpha, "Popularity concentration (instead of a preset)")
                  ->check(CLI::PositiveNumber);
    p->excludes(a);
    sub->add_option("--drift", drift, "Per-step resampling: alpha_start,alpha_end,ramp_steps");
    sub->add_flag("--no-drift", no_drift, "Disable the preset's drift schedule");
  }

  double resolved_alpha() const {
    if (!preset.empty()) return moeskew::preset(parse_preset(preset)).alpha;
    if (alpha) return *alpha;
    throw InvalidArgument("give --preset or --alpha");
  }

  std::optional<DriftSchedule> resolved_drift() const {
    if (no_drift) return std::nullopt;
    if (!drift.empty()) return parse_drift(drift);
    if (!preset.empty()) return moeskew::preset(parse_preset(preset)).drift;
    return std::nullopt;
  }

  void echo(Json& j) const {
    j["preset"] = preset.empty() ? Json() : Json(preset);
    j["alpha"] = resolved_alpha();
    j["drift"] = drift_json(resolved_drift());
  }
};

PlacementScheme placement_from(const std::string& text, const Global& g) {
  return parse_placement_scheme(text, derive_seed(g.seed, "placement"));
}

// ---------------------------------------------------------------------------
// analyze

void add_analyze(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    std::string trace, out, summary, gini_mode = "per_step", pooling = "records";
    bool model_latency = false;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("analyze", "Per-step Gini, alpha, and max/mean of a trace");
  sub->add_option("--trace", o->trace, "Trace file (.jsonl or .jsonl.gz)")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", o->out, "Per-step CSV (default stdout)");
  sub->add_option("--summary", o->summary, "Summary JSON");
  sub->add_option("--gini-mode", o->gini_mode, "Window Gini: per_step mean or pooled")
      ->check(CLI::IsMember({"per_step", "pooled"}));
  sub->add_option("--p99-pooling", o->pooling, "records or per_layer")->check(CLI::IsMember({"records", "per_layer"}));
  sub->add_flag("--model-latency", o->model_latency, "Model dispatch time when the trace has no timings");
  handlers[sub] = [o, &ctx] {
    const auto trace = read_trace(o->trace);
    TraceSummaryOptions opts;
    opts.gini_mode = parse_gini_mode(o->gini_mode);
    opts.p99_pooling = parse_pooling(o->pooling);
    if (o->model_latency) opts.topology = ctx.global.topology(trace.metadata.ep);
    auto config = base_config("analyze", ctx.global);
    config["trace"] = o->trace;
    config["gini_mode"] = o->gini_mode;
    config["p99_pooling"] = o->pooling;
    config["model_latency"] = o->model_latency;
    if (o->model_latency) config["topology"] = ctx.global.topology_json();

    const auto steps = step_metrics(trace, opts);
    CsvTable t;
    t.schema = "moeskew.analyze/1";
    t.columns = {"step", "layer", "gini", "alpha", "rank_max_mean", "expert_max_mean", "system_ms"};
    for (const auto& m : steps) {
      t.add_row({std::to_string(m.step), std::to_string(m.layer), format_number(m.gini), format_number(m.alpha),
                 format_number(m.rank_max_mean), format_optional(m.expert_max_mean), format_optional(m.system_ms)});
    }
    emit_table(o->out, t, config, *ctx.out);

    const auto w = summarize_window(trace, opts);
    Json body;
    body["records"] = w.records;
    body["gini"] = to_json(w.gini);
    body["alpha"] = summary_or_null(w.alpha);
    body["alpha_pooled"] = number_or_null(w.alpha_pooled);
    body["max_mean"] = summary_or_null(w.max_mean);
    body["p99_ms"] = w.p99_ms ? Json(*w.p99_ms) : Json();
    emit_summary(o->summary, "analyze", config, body);
  };
}

// ---------------------------------------------------------------------------
// generate

void add_generate(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    RouterOptions router;
    std::string out, summary, placement = "block", sequences = "resample", model = "synthetic", condition;
    std::string layer_alpha;
    int experts = 128, topk = 8, ep = 16, tp = 1, layers = 1;
    std::size_t tokens = 65'536;
    std::int64_t steps = 10, gbs = 16, seqlen = 4096, hidden = 2048, bytes_per_elem = 2;
    bool timing = false;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("generate", "Write a synthetic dispatch trace");
  o->router.add(sub);
  sub->add_option("--out", o->out, "Trace file; .gz compresses")->required();
  sub->add_option("--summary", o->summary, "Summary JSON");
  sub->add_option("--experts", o->experts, "Expert count E")->check(CLI::PositiveNumber);
  sub->add_option("--topk", o->topk, "Experts per token k")->check(CLI::PositiveNumber);
  sub->add_option("--ep", o->ep, "Rank count P")->check(CLI::PositiveNumber);
  sub->add_option("--tp", o->tp, "Tensor-parallel degree (metadata only)")->check(CLI::PositiveNumber);
  sub->add_option("--tokens", o->tokens, "Tokens per step across all ranks")->check(CLI::PositiveNumber);
  sub->add_option("--steps", o->steps, "Steps")->check(CLI::NonNegativeNumber);
  sub->add_option("--layers", o->layers, "MoE layers per step")->check(CLI::PositiveNumber);
  sub->add_option("--layer-alpha", o->layer_alpha, "Comma-separated concentration per layer");
  sub->add_option("--placement", o->placement, "block, round_robin, or random")
      ->check(CLI::IsMember({"block", "round_robin", "random"}));
  sub->add_option("--mock-sequences", o->sequences, "resample per step, or fixed at step 0")
      ->check(CLI::IsMember({"resample", "fixed"}));
  sub->add_option("--model", o->model, "Model label");
  sub->add_option("--condition", o->condition, "Condition label (default: preset name or synthetic)");
  sub->add_option("--gbs", o->gbs, "Global batch size (metadata)")->check(CLI::NonNegativeNumber);
  sub->add_option("--seqlen", o->seqlen, "Sequence length (metadata)")->check(CLI::NonNegativeNumber);
  sub->add_option("--hidden", o->hidden, "Hidden size")->check(CLI::NonNegativeNumber);
  sub->add_option("--bytes-per-elem", o->bytes_per_elem, "Bytes per hidden element")->check(CLI::NonNegativeNumber);
  sub->add_flag("--timing", o->timing, "Attach modelled per-rank dispatch times");
  handlers[sub] = [o, &ctx] {
    GenerateConfig cfg;
    auto& m = cfg.metadata;
    m.model = o->model;
    m.condition = !o->condition.empty() ? o->condition : (!o->router.preset.empty() ? o->router.preset : "synthetic");
    m.ep = o->ep;
    m.tp = o->tp;
    m.experts = o->experts;
    m.topk = o->topk;
    m.gbs = o->gbs;
    m.seqlen = o->seqlen;
    m.hidden = o->hidden;
    m.bytes_per_elem = o->bytes_per_elem;
    cfg.tokens_per_step = o->tokens;
    cfg.steps = o->steps;
    cfg.layers = o->layers;
    cfg.alpha = o->router.resolved_alpha();
    cfg.drift = o->router.resolved_drift();
    if (!o->layer_alpha.empty()) {
      for (const auto& part : split(o->layer_alpha, ',')) {
        try {
          cfg.layer_alpha.push_back(std::stod(part));
        } catch (const std::exception&) {
          throw InvalidArgument(fmt::format("--layer-alpha: cannot parse \"{}\"", part));
        }
      }
    }
    cfg.placement = placement_from(o->placement, ctx.global);
    cfg.resample_tokens = o->sequences == "resample";
    if (o->timing) cfg.timing_topology = ctx.global.topology(o->ep);

    auto config = base_config("generate", ctx.global);
    o->router.echo(config);
    config["experts"] = o->experts;
    config["topk"] = o->topk;
    config["ep"] = o->ep;
    config["tokens"] = o->tokens;
    config["steps"] = o->steps;
    config["layers"] = o->layers;
    config["layer_alpha"] = cfg.layer_alpha;
    config["placement"] = o->placement;
    config["mock_sequences"] = o->sequences;
    config["timing"] = o->timing;
    if (o->timing) config["topology"] = ctx.global.topology_json();

    TraceWriter writer(o->out, resolved_metadata(cfg));
    generate_trace(cfg, ctx.global.seed, [&](const StepRecord& r) { writer.write(r); });
    writer.close();
    Json body;
    body["records"] = writer.records_written();
    body["metadata"] = Json::parse(format_metadata(resolved_metadata(cfg)));
    emit_summary(o->summary, "generate", config, body);
  };
}

// ---------------------------------------------------------------------------
// simulate

void add_simulate(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    std::string trace, out, per_rank, summary;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("simulate", "AlltoAll completion model over every trace record");
  sub->add_option("--trace", o->trace, "Trace file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", o->out, "Per-record CSV (default stdout)");
  sub->add_option("--per-rank", o->per_rank, "Per-rank CSV");
  sub->add_option("--summary", o->summary, "Summary JSON");
  handlers[sub] = [o, &ctx] {
    const auto trace = read_trace(o->trace);
    const auto topo = ctx.global.topology(trace.metadata.ep);
    const auto bpt = static_cast<double>(trace.metadata.bytes_per_token());
    if (!(bpt > 0.0)) throw DataError("simulate: trace metadata needs positive hidden and bytes_per_elem");
    auto config = base_config("simulate", ctx.global);
    config["trace"] = o->trace;
    config["topology"] = ctx.global.topology_json();

    const auto n = trace.records.size();
    std::vector<CompletionReport> reports(n);
    std::vector<SkewDecomposition> decomp(n);
    parallel_for(n, [&](std::size_t i) {
      reports[i] = completion_time(trace.records[i].send_counts, topo, bpt);
      decomp[i] = skew_baseline_decomposition(trace.records[i].send_counts, topo, bpt);
    });
    CsvTable t;
    t.schema = "moeskew.simulate/1";
    t.columns = {"step", "layer", "system_ms", "straggler", "skew_multiplier", "baseline_ms", "transfer_multiplier",
                 "max_ingress_intra_bytes", "max_ingress_inter_bytes"};
    CsvTable pr;
    pr.schema = "moeskew.simulate_ranks/1";
    pr.columns = {"step", "layer", "rank", "time_ms", "ingress_intra_bytes", "ingress_inter_bytes"};
    std::vector<double> sys, skew;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rec = trace.records[i];
      const auto& r = reports[i];
      t.add_row({std::to_string(rec.step), std::to_string(rec.layer), format_number(r.system_time * 1e3),
                 std::to_string(r.straggler), format_number(r.skew_multiplier),
                 format_number(decomp[i].baseline_seconds * 1e3), format_number(decomp[i].multiplier),
                 format_number(*std::max_element(r.intra_bytes.begin(), r.intra_bytes.end())),
                 format_number(*std::max_element(r.inter_bytes.begin(), r.inter_bytes.end()))});
      for (std::size_t j = 0; j < r.per_rank_time.size(); ++j) {
        pr.add_row({std::to_string(rec.step), std::to_string(rec.layer), std::to_string(j),
                    format_number(r.per_rank_time[j] * 1e3), format_number(r.intra_bytes[j]),
                    format_number(r.inter_bytes[j])});
      }
      sys.push_back(r.system_time * 1e3);
      skew.push_back(r.skew_multiplier);
    }
    emit_table(o->out, t, config, *ctx.out);
    if (!o->per_rank.empty()) emit_table(o->per_rank, pr, config, *ctx.out);
    Json body;
    body["records"] = n;
    body["system_ms"] = sys.empty() ? Json() : to_json(summarize(sys));
    body["skew_multiplier"] = skew.empty() ? Json() : to_json(summarize(skew));
    emit_summary(o->summary, "simulate", config, body);
  };
}

// ---------------------------------------------------------------------------
// scan-ep

void add_scan_ep(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    RouterOptions router;
    std::string out, summary, placement = "block", mode = "resampled";
    std::vector<int> ep{4, 8, 16, 32};
    int experts = 128, topk = 8, warmup = 50, measure = 200;
    std::size_t tokens = 131'072;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("scan-ep", "Matched-window EP scan of a synthetic router");
  o->router.add(sub);
  sub->add_option("--ep", o->ep, "Rank counts, comma separated")->delimiter(',')->check(CLI::PositiveNumber);
  sub->add_option("--experts", o->experts, "Expert count E")->check(CLI::PositiveNumber);
  sub->add_option("--topk", o->topk, "Experts per token k")->check(CLI::PositiveNumber);
  sub->add_option("--warmup", o->warmup, "Warmup steps (generated, discarded)")->check(CLI::NonNegativeNumber);
  sub->add_option("--measure", o->measure, "Measured steps")->check(CLI::PositiveNumber);
  sub->add_option("--tokens", o->tokens, "Tokens per step, identical at every P")->check(CLI::PositiveNumber);
  sub->add_option("--mode", o->mode, "fixed or resampled token choices across P")
      ->check(CLI::IsMember({"fixed", "resampled"}));
  sub->add_option("--placement", o->placement, "block, round_robin, or random")
      ->check(CLI::IsMember({"block", "round_robin", "random"}));
  sub->add_option("--out", o->out, "Per-P CSV (default stdout)");
  sub->add_option("--summary", o->summary, "Summary JSON");
  handlers[sub] = [o, &ctx] {
    const auto& g = ctx.global;
    RouterModel router;
    router.experts = o->experts;
    router.topk = o->topk;
    router.popularity = sample_popularity(o->experts, o->router.resolved_alpha(), derive_seed(g.seed, "popularity"));
    router.drift = o->router.resolved_drift();
    router.validate();
    EpScanConfig cfg;
    cfg.p_list = o->ep;
    cfg.placement = placement_from(o->placement, g);
    cfg.window = {o->warmup, o->measure};
    cfg.mode = o->mode == "fixed" ? ScanMode::fixed : ScanMode::resampled;
    cfg.tokens_per_step = o->tokens;
    auto config = base_config("scan-ep", g);
    o->router.echo(config);
    config["experts"] = o->experts;
    config["topk"] = o->topk;
    config["ep"] = o->ep;
    config["warmup"] = o->warmup;
    config["measure"] = o->measure;
    config["tokens"] = o->tokens;
    config["mode"] = o->mode;
    config["placement"] = o->placement;

    const auto r = ep_scan(router, cfg, g.seed);
    CsvTable t;
    t.schema = "moeskew.scan_ep/1";
    t.columns = {"ep",           "expert_max_mean_mean", "expert_max_mean_stdev", "expert_max_mean_p99",
                 "rank_max_mean_mean", "gini_mean",      "gini_p50",              "gini_p99"};
    Json points = Json::array();
    for (const auto& p : r.points) {
      t.add_row({std::to_string(p.p), format_number(p.expert_max_mean.mean), format_number(p.expert_max_mean.stdev),
                 format_number(p.expert_max_mean.p99), format_number(p.rank_max_mean.mean),
                 format_number(p.gini.mean), format_number(p.gini.p50), format_number(p.gini.p99)});
      Json pj;
      pj["ep"] = p.p;
      pj["expert_max_mean"] = to_json(p.expert_max_mean);
      pj["rank_max_mean"] = to_json(p.rank_max_mean);
      pj["gini"] = to_json(p.gini);
      points.push_back(pj);
    }
    emit_table(o->out, t, config, *ctx.out);
    Json body;
    body["flatness_pct"] = r.flatness_pct;
    body["loads_identical"] = r.loads_identical;
    body["points"] = points;
    emit_summary(o->summary, "scan-ep", config, body);
  };
}

// ---------------------------------------------------------------------------
// correlate

void add_correlate(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    std::string cells, out, cells_out, summary;
    int synthetic = 0, ranks = 16, steps = 4;
    std::size_t tokens = 32'768, permutations = 1000, min_group = 3;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("correlate", "Gini vs P99 correlation over factorial cells");
  auto* c = sub->add_option("--cells", o->cells, "Cell CSV with p99_ms")->check(CLI::ExistingFile);
  auto* s = sub->add_option("--synthetic", o->synthetic, "Synthesize this many cells per architecture")
                ->check(CLI::PositiveNumber);
  c->excludes(s);
  sub->add_option("--ranks", o->ranks, "Ranks for synthetic cells")->check(CLI::PositiveNumber);
  sub->add_option("--steps", o->steps, "Steps per synthetic cell")->check(CLI::PositiveNumber);
  sub->add_option("--tokens", o->tokens, "Tokens per step for synthetic cells")->check(CLI::PositiveNumber);
  sub->add_option("--permutations", o->permutations, "Permutation-null draws (0 disables)");
  sub->add_option("--min-group", o->min_group, "Minimum cells per architecture")->check(CLI::PositiveNumber);
  sub->add_option("--out", o->out, "Per-group fit CSV (default stdout)");
  sub->add_option("--cells-out", o->cells_out, "Cell CSV of the analysed cells");
  sub->add_option("--summary", o->summary, "Summary JSON");
  handlers[sub] = [o, &ctx] {
    const auto& g = ctx.global;
    auto config = base_config("correlate", g);
    std::vector<CellResult> cells;
    if (!o->cells.empty()) {
      cells = read_cells_csv(o->cells);
      config["cells"] = o->cells;
    } else if (o->synthetic > 0) {
      SyntheticCellsConfig sc;
      sc.cells_per_architecture = o->synthetic;
      sc.ranks = o->ranks;
      sc.steps = o->steps;
      sc.tokens_per_step = o->tokens;
      sc.topology = g.topology(o->ranks);
      cells = synthetic_cells(sc, g.seed);
      config["synthetic"] = o->synthetic;
      config["ranks"] = o->ranks;
      config["steps"] = o->steps;
      config["tokens"] = o->tokens;
      config["topology"] = g.topology_json();
    } else {
      throw InvalidArgument("correlate: give --cells or --synthetic");
    }
    config["permutations"] = o->permutations;
    config["min_group"] = o->min_group;

    const auto r = gini_latency_correlation(cells, o->min_group);
    CsvTable t;
    t.schema = "moeskew.correlate/1";
    t.columns = {"group", "cells", "r", "slope", "intercept"};
    Json groups = Json::array();
    for (const auto& gf : r.groups) {
      t.add_row({to_string(gf.architecture), std::to_string(gf.cells), format_number(gf.fit.r),
                 format_number(gf.fit.slope), format_number(gf.fit.intercept)});
      Json gj;
      gj["architecture"] = to_string(gf.architecture);
      gj["cells"] = gf.cells;
      gj["r"] = gf.fit.r;
      gj["slope"] = gf.fit.slope;
      gj["intercept"] = gf.fit.intercept;
      groups.push_back(gj);
    }
    std::vector<double> x, y;
    for (const auto& cell : cells) {
      x.push_back(cell.gini.mean);
      y.push_back(*cell.p99_ms);
    }
    const auto pooled = least_squares(x, y);
    t.add_row({"pooled", std::to_string(r.cells), format_number(pooled.r), format_number(pooled.slope),
               format_number(pooled.intercept)});
    emit_table(o->out, t, config, *ctx.out);
    if (!o->cells_out.empty()) emit_table(o->cells_out, cells_table(cells), config, *ctx.out);

    Json body;
    body["cells"] = r.cells;
    body["pooled_r"] = r.pooled_r;
    body["groups"] = groups;
    if (o->permutations > 0) {
      const auto null = permutation_null(x, y, o->permutations, derive_seed(g.seed, "correlate-null"));
      Json nj;
      nj["permutations"] = null.permutations;
      nj["null_mean"] = null.null_mean;
      nj["null_lo"] = null.null_lo;
      nj["null_hi"] = null.null_hi;
      nj["bound"] = null.bound;
      nj["fraction_within"] = null.fraction_within;
      body["permutation_null"] = nj;
    }
    emit_summary(o->summary, "correlate", config, body);
  };
}

// ---------------------------------------------------------------------------
// lags, depth-profile

void add_lags(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    std::string trace, out, summary;
    int max_lag = 20;
    std::size_t permutations = 0;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("lags", "Lagged Pearson r of per-expert loads");
  sub->add_option("--trace", o->trace, "Trace file with expert_loads")->required()->check(CLI::ExistingFile);
  sub->add_option("--max-lag", o->max_lag, "Largest lag")->check(CLI::PositiveNumber);
  sub->add_option("--null-permutations", o->permutations, "Step reorderings for a 99% null envelope");
  sub->add_option("--out", o->out, "Per-lag CSV (default stdout)");
  sub->add_option("--summary", o->summary, "Summary JSON");
  handlers[sub] = [o, &ctx] {
    const auto trace = read_trace(o->trace);
    auto config = base_config("lags", ctx.global);
    config["trace"] = o->trace;
    config["max_lag"] = o->max_lag;
    config["null_permutations"] = o->permutations;
    const auto r = lag_correlation(trace, o->max_lag);
    std::optional<LagEnvelope> env;
    if (o->permutations > 0) {
      env = lag_null_envelope(trace, o->max_lag, o->permutations, derive_seed(ctx.global.seed, "lags-null"));
    }
    CsvTable t;
    t.schema = "moeskew.lags/1";
    t.columns = {"lag", "r", "null_lo", "null_hi"};
    for (std::size_t i = 0; i < r.size(); ++i) {
      t.add_row({std::to_string(i + 1), format_number(r[i]), env ? format_number(env->lo[i]) : "",
                 env ? format_number(env->hi[i]) : ""});
    }
    emit_table(o->out, t, config, *ctx.out);
    Json body;
    body["r"] = r;
    if (env) {
      body["null_lo"] = env->lo;
      body["null_hi"] = env->hi;
    }
    emit_summary(o->summary, "lags", config, body);
  };
}

void add_depth(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    std::string trace, out, summary;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("depth-profile", "Mean per-step Gini per layer");
  sub->add_option("--trace", o->trace, "Trace file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", o->out, "Per-layer CSV (default stdout)");
  sub->add_option("--summary", o->summary, "Summary JSON");
  handlers[sub] = [o, &ctx] {
    const auto trace = read_trace(o->trace);
    auto config = base_config("depth-profile", ctx.global);
    config["trace"] = o->trace;
    const auto d = depth_profile(trace);
    CsvTable t;
    t.schema = "moeskew.depth/1";
    t.columns = {"layer", "depth_fraction", "mean_gini"};
    for (std::size_t i = 0; i < d.layers.size(); ++i) {
      t.add_row({std::to_string(d.layers[i]), format_number(d.depth_fraction[i]), format_number(d.mean_gini[i])});
    }
    emit_table(o->out, t, config, *ctx.out);
    Json body;
    body["layers"] = d.layers;
    body["mean_gini"] = d.mean_gini;
    body["depth_fraction"] = d.depth_fraction;
    emit_summary(o->summary, "depth-profile", config, body);
  };
}

// ---------------------------------------------------------------------------
// classify, factorial, report

struct ThresholdOptions {
  ClassThresholds t;

  void add(CLI::App* sub) {
    sub->add_option("--resilient-real-max", t.resilient_real_max, "Real Gini below this can be data-resilient")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--resilient-ratio-min", t.resilient_ratio_min, "Minimum mock/real ratio for data-resilient")
        ->check(CLI::PositiveNumber);
    sub->add_option("--persistent-real-min", t.persistent_real_min, "Real Gini above this can be persistent")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--persistent-ratio-max", t.persistent_ratio_max, "Mock/real ratio below this can be persistent")
        ->check(CLI::PositiveNumber);
  }

  Json json() const {
    Json j;
    j["resilient_real_max"] = t.resilient_real_max;
    j["resilient_ratio_min"] = t.resilient_ratio_min;
    j["persistent_real_min"] = t.persistent_real_min;
    j["persistent_ratio_max"] = t.persistent_ratio_max;
    return j;
  }
};

Json rows_json(const FactorialMatrix& m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const auto& s = m.summaries[i];
    Json r;
    r["architecture"] = to_string(m.rows[i]);
    r["best"] = s.best ? Json(to_string(*s.best)) : Json();
    r["best_real"] = s.best_real ? Json(to_string(*s.best_real)) : Json();
    r["improvement_ratio"] = s.improvement_ratio ? Json(*s.improvement_ratio) : Json();
    r["missing_counterpart"] = s.missing_counterpart;
    r["class"] = s.label ? Json(to_string(*s.label)) : Json();
    rows.push_back(r);
  }
  return rows;
}

void add_classify(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    ThresholdOptions th;
    std::optional<double> mock, real;
    std::string cells, out, summary;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("classify", "Assign data_resilient / persistently_concentrated / mixed");
  sub->add_option("--mock", o->mock, "Mock-condition Gini")->check(CLI::NonNegativeNumber);
  sub->add_option("--real", o->real, "Real-text Gini")->check(CLI::NonNegativeNumber);
  sub->add_option("--cells", o->cells, "Cell CSV: classify each architecture (mock vs best real)")
      ->check(CLI::ExistingFile);
  sub->add_option("--out", o->out, "Per-architecture CSV (default stdout)");
  sub->add_option("--summary", o->summary, "Summary JSON");
  o->th.add(sub);
  handlers[sub] = [o, &ctx] {
    auto config = base_config("classify", ctx.global);
    config["thresholds"] = o->th.json();
    CsvTable t;
    t.schema = "moeskew.classify/1";
    t.columns = {"architecture", "mock_gini", "real_gini", "ratio", "class"};
    Json body;
    if (!o->cells.empty()) {
      config["cells"] = o->cells;
      const auto cells = read_cells_csv(o->cells);
      const auto m = factorial_aggregate(cells, o->th.t);
      for (std::size_t i = 0; i < m.rows.size(); ++i) {
        const auto& s = m.summaries[i];
        const auto* mock = m.find(m.rows[i], Condition::mock);
        t.add_row({to_string(m.rows[i]), mock ? format_number(mock->gini.mean) : "",
                   s.best_real ? format_number(m.find(m.rows[i], *s.best_real)->gini.mean) : "",
                   format_optional(s.improvement_ratio), s.label ? to_string(*s.label) : ""});
      }
      body["rows"] = rows_json(m);
    } else if (o->mock && o->real) {
      config["mock"] = *o->mock;
      config["real"] = *o->real;
      const auto label = classify(*o->mock, *o->real, o->th.t);
      const std::optional<double> ratio =
          *o->real > 0.0 ? std::optional<double>(*o->mock / *o->real) : std::nullopt;
      t.add_row({"", format_number(*o->mock), format_number(*o->real), format_optional(ratio), to_string(label)});
      body["class"] = to_string(label);
    } else {
      throw InvalidArgument("classify: give --mock and --real, or --cells");
    }
    emit_table(o->out, t, config, *ctx.out);
    emit_summary(o->summary, "classify", config, body);
  };
}

void add_factorial(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    ThresholdOptions th;
    std::vector<std::string> traces;
    std::string cells, out, rows_out, heatmap, summary, gini_mode = "per_step", pooling = "records";
    bool model_latency = false;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("factorial", "Architecture x condition matrix with improvement ratios");
  auto* tr = sub->add_option("--trace-cell", o->traces, "architecture:condition:path (repeatable)");
  auto* ce = sub->add_option("--cells", o->cells, "Cell CSV instead of traces")->check(CLI::ExistingFile);
  tr->excludes(ce);
  sub->add_option("--gini-mode", o->gini_mode, "per_step or pooled")->check(CLI::IsMember({"per_step", "pooled"}));
  sub->add_option("--p99-pooling", o->pooling, "records or per_layer")->check(CLI::IsMember({"records", "per_layer"}));
  sub->add_flag("--model-latency", o->model_latency, "Model dispatch time when a trace has no timings");
  sub->add_option("--out", o->out, "Cell CSV (default stdout)");
  sub->add_option("--rows-out", o->rows_out, "Per-architecture CSV");
  sub->add_option("--heatmap", o->heatmap, "SVG heatmap");
  sub->add_option("--summary", o->summary, "Summary JSON");
  o->th.add(sub);
  handlers[sub] = [o, &ctx] {
    auto config = base_config("factorial", ctx.global);
    config["thresholds"] = o->th.json();
    FactorialMatrix m;
    if (!o->traces.empty()) {
      TraceSummaryOptions opts;
      opts.gini_mode = parse_gini_mode(o->gini_mode);
      opts.p99_pooling = parse_pooling(o->pooling);
      std::vector<LabeledTrace> labeled;
      for (const auto& spec : o->traces) {
        const auto first = spec.find(':');
        const auto second = first == std::string::npos ? first : spec.find(':', first + 1);
        if (second == std::string::npos) {
          throw InvalidArgument(fmt::format("--trace-cell expects architecture:condition:path, got \"{}\"", spec));
        }
        LabeledTrace lt{parse_architecture(spec.substr(0, first)),
                        parse_condition(spec.substr(first + 1, second - first - 1)),
                        read_trace(spec.substr(second + 1))};
        if (o->model_latency) opts.topology = ctx.global.topology(lt.trace.metadata.ep);
        labeled.push_back(std::move(lt));
      }
      if (o->model_latency) {
        for (const auto& lt : labeled) {
          if (lt.trace.metadata.ep != labeled.front().trace.metadata.ep) {
            throw InvalidArgument("factorial: --model-latency needs every trace at the same EP");
          }
        }
      }
      m = factorial_aggregate(labeled, opts, o->th.t);
      config["traces"] = o->traces;
      config["gini_mode"] = o->gini_mode;
      config["p99_pooling"] = o->pooling;
      config["model_latency"] = o->model_latency;
      if (o->model_latency) config["topology"] = ctx.global.topology_json();
    } else if (!o->cells.empty()) {
      m = factorial_aggregate(read_cells_csv(o->cells), o->th.t);
      config["cells"] = o->cells;
    } else {
      throw InvalidArgument("factorial: give --trace-cell or --cells");
    }
    std::vector<CellResult> cells;
    for (const auto& [key, cell] : m.cells) cells.push_back(cell);
    emit_table(o->out, cells_table(cells), config, *ctx.out);
    if (!o->rows_out.empty()) emit_table(o->rows_out, factorial_rows_table(m), config, *ctx.out);
    if (!o->heatmap.empty()) emit_heatmap(m, o->heatmap, config);
    Json body;
    body["rows"] = rows_json(m);
    emit_summary(o->summary, "factorial", config, body);
  };
}

void add_report(CLI::App& app, Context& ctx, std::map<CLI::App*, std::function<void()>>& handlers) {
  struct Opts {
    std::string factorial, heatmap, plot_data, rows_out, summary, title = "Per-rank routing Gini";
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("report", "Render a factorial cell table");
  sub->add_option("--factorial", o->factorial, "Cell CSV")->required()->check(CLI::ExistingFile);
  sub->add_option("--heatmap", o->heatmap, "SVG output")->required();
  sub->add_option("--plot-data", o->plot_data, "Plot-data CSV");
  sub->add_option("--rows-out", o->rows_out, "Per-architecture CSV");
  sub->add_option("--title", o->title, "Heatmap title");
  sub->add_option("--summary", o->summary, "Summary JSON");
  handlers[sub] = [o, &ctx] {
    auto config = base_config("report", ctx.global);
    config["factorial"] = o->factorial;
    config["title"] = o->title;
    const auto m = factorial_aggregate(read_cells_csv(o->factorial));
    HeatmapStyle style;
    style.title = o->title;
    emit_heatmap(m, o->heatmap, config,
                 o->plot_data.empty() ? std::nullopt : std::optional<std::filesystem::path>(o->plot_data), style);
    if (!o->rows_out.empty()) emit_table(o->rows_out, factorial_rows_table(m), config, *ctx.out);
    Json body;
    body["rows"] = rows_json(m);
    emit_summary(o->summary, "report", config, body);
  };
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  Context ctx;
  ctx.out = &out;
  CLI::App app{"MoE expert-parallel dispatch trace toolkit", "moeskew"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  auto& g = ctx.global;
  app.add_option("--seed", g.seed, "Base seed; every sub-seed is derived from it");
  app.add_option("--threads", g.threads, "Worker threads (0 = all processors); results do not depend on it");
  app.add_option("--gpus-per-node", g.gpus_per_node, "Ranks per node")->check(CLI::PositiveNumber);
  app.add_option("--bw-intra", g.bw_intra_gbs, "Per-GPU intra-node bandwidth, GB/s")->check(CLI::PositiveNumber);
  app.add_option("--bw-inter", g.bw_inter_gbs, "Per-GPU inter-node bandwidth, GB/s")->check(CLI::PositiveNumber);
  app.add_option("--latency-us", g.latency_us, "Fixed latency per collective, microseconds")
      ->check(CLI::NonNegativeNumber);

  std::map<CLI::App*, std::function<void()>> handlers;
  add_analyze(app, ctx, handlers);
  add_generate(app, ctx, handlers);
  add_simulate(app, ctx, handlers);
  add_scan_ep(app, ctx, handlers);
  add_correlate(app, ctx, handlers);
  add_lags(app, ctx, handlers);
  add_depth(app, ctx, handlers);
  add_classify(app, ctx, handlers);
  add_factorial(app, ctx, handlers);
  add_report(app, ctx, handlers);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    set_thread_count(g.threads);
    for (auto* sub : app.get_subcommands()) handlers.at(sub)();
    return kOk;
  } catch (const InvalidArgument& e) {
    err << "moeskew: invalid configuration: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "moeskew: data error: " << e.what() << '\n';
    return kData;
  } catch (const IoError& e) {
    err << "moeskew: I/O error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "moeskew: internal error: " << e.what() << '\n';
    return kInternal;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace moeskew::cli
