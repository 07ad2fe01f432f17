// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace moeskew {

using Count = std::int64_t;

/// P x P dispatch matrix: at(i, j) is the number of tokens rank i sends to
/// rank j in one dispatch. Stored row-major. Entries are non-negative.
class SendCounts {
public:
  SendCounts() = default;

  /// Zero matrix of size p x p.
  explicit SendCounts(int p);

  /// Takes ownership of a row-major p*p buffer. Throws DataError if the
  /// buffer is not p*p or any entry is negative.
  SendCounts(int p, std::vector<Count> row_major);

  int p() const { return p_; }
  Count at(int i, int j) const { return data_[index(i, j)]; }
  Count& at(int i, int j) { return data_[index(i, j)]; }

  Count row_sum(int i) const;
  Count column_sum(int j) const;
  Count total() const;

  std::span<const Count> row_major() const { return data_; }

  bool operator==(const SendCounts&) const = default;

private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(p_) + static_cast<std::size_t>(j);
  }

  int p_ = 0;
  std::vector<Count> data_;
};

/// Per-expert receive counts for one dispatch. Independent of placement.
struct ExpertLoads {
  std::vector<Count> counts;

  int experts() const { return static_cast<int>(counts.size()); }
  Count total() const;
  bool operator==(const ExpertLoads&) const = default;
};

/// Per-rank receive counts c_j (column sums of a SendCounts).
struct RankLoads {
  std::vector<Count> counts;

  int ranks() const { return static_cast<int>(counts.size()); }
  Count total() const;
  bool operator==(const RankLoads&) const = default;
};

/// Balanced assignment of E experts onto P ranks, E/P experts per rank.
class Placement {
public:
  /// Throws InvalidArgument unless every rank in [0, p) appears exactly
  /// expert_to_rank.size() / p times.
  Placement(std::vector<int> expert_to_rank, int p);

  int experts() const { return static_cast<int>(expert_to_rank_.size()); }
  int ranks() const { return p_; }
  int experts_per_rank() const { return experts() / p_; }
  int rank_of(int expert) const { return expert_to_rank_[static_cast<std::size_t>(expert)]; }
  std::span<const int> expert_to_rank() const { return expert_to_rank_; }

  bool operator==(const Placement&) const = default;

private:
  std::vector<int> expert_to_rank_;
  int p_;
};

/// Two-tier cluster description. Rank r lives on node r / gpus_per_node.
/// Bandwidths are per GPU in bytes/s; the intra-node figure is the
/// aggregate NVLink pipe shared by all same-node partners.
struct TopologySpec {
  int p = 16;
  int gpus_per_node = 4;
  double bw_intra = 450e9;
  double bw_inter = 25e9;
  double fixed_latency = 20e-6;

  int node_of(int rank) const { return rank / gpus_per_node; }
  bool same_node(int a, int b) const { return node_of(a) == node_of(b); }

  /// Throws InvalidArgument on non-positive rank counts or bandwidths.
  void validate() const;
};

/// Trace-level metadata written as the first line of a trace file.
struct TraceMetadata {
  std::string model;
  std::string condition;
  int ep = 0;
  int tp = 1;
  int experts = 0;
  int topk = 0;
  std::int64_t gbs = 0;
  std::int64_t seqlen = 0;
  std::int64_t hidden = 0;
  std::int64_t bytes_per_elem = 0;
  // Tokens produced per rank per dispatch. When present, routing is
  // declared drop-free and every send row must sum to local_tokens * topk.
  std::optional<std::int64_t> local_tokens;
  std::optional<std::string> dispatcher_version;

  std::int64_t bytes_per_token() const { return hidden * bytes_per_elem; }

  /// Throws DataError on non-positive ep/experts/topk or topk > experts.
  void validate() const;

  bool operator==(const TraceMetadata&) const = default;
};

struct StepRecord {
  std::int64_t step = 0;
  int layer = 0;
  SendCounts send_counts;
  std::optional<ExpertLoads> expert_loads;
  std::optional<std::vector<double>> rank_dispatch_ms;
  std::optional<std::string> timing_source;

  bool operator==(const StepRecord&) const = default;
};

struct DispatchTrace {
  TraceMetadata metadata;
  std::vector<StepRecord> records;

  /// Validates the metadata and every record, including (step, layer)
  /// uniqueness. Throws DataError naming the offending record.
  void validate() const;

  bool operator==(const DispatchTrace&) const = default;
};

/// Checks one record against the trace metadata. Throws DataError with a
/// message naming the failed check; callers prepend record context.
void validate_record(const TraceMetadata& meta, const StepRecord& rec);

/// Column sums of s.
RankLoads rank_loads_from(const SendCounts& s);

}  // namespace moeskew
