// SPDX-License-Identifier: Apache-2.0

#include "moeskew/trace.hpp"

#include <limits>
#include <numeric>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "moeskew/error.hpp"

namespace moeskew {

SendCounts::SendCounts(int p) : SendCounts(p, std::vector<Count>(static_cast<std::size_t>(p) * p, 0)) {}

SendCounts::SendCounts(int p, std::vector<Count> row_major) : p_(p), data_(std::move(row_major)) {
  if (p < 1) {
    throw DataError(fmt::format("send_counts: rank count must be positive, got {}", p));
  }
  const auto expected = static_cast<std::size_t>(p) * static_cast<std::size_t>(p);
  if (data_.size() != expected) {
    throw DataError(fmt::format("send_counts: expected {}x{} = {} entries, got {}", p, p, expected,
                                data_.size()));
  }
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (data_[k] < 0) {
      throw DataError(fmt::format("send_counts[{}][{}] = {} is negative", k / p, k % p, data_[k]));
    }
  }
}

Count SendCounts::row_sum(int i) const {
  auto row = row_major().subspan(static_cast<std::size_t>(i) * p_, p_);
  return std::accumulate(row.begin(), row.end(), Count{0});
}

Count SendCounts::column_sum(int j) const {
  Count sum = 0;
  for (int i = 0; i < p_; ++i) sum += at(i, j);
  return sum;
}

Count SendCounts::total() const { return std::accumulate(data_.begin(), data_.end(), Count{0}); }

Count ExpertLoads::total() const { return std::accumulate(counts.begin(), counts.end(), Count{0}); }

Count RankLoads::total() const { return std::accumulate(counts.begin(), counts.end(), Count{0}); }

Placement::Placement(std::vector<int> expert_to_rank, int p)
    : expert_to_rank_(std::move(expert_to_rank)), p_(p) {
  const auto e = expert_to_rank_.size();
  if (p < 1 || e == 0 || e % static_cast<std::size_t>(p) != 0) {
    throw InvalidArgument(
        fmt::format("placement: expert count {} is not divisible by rank count {}", e, p));
  }
  std::vector<std::size_t> per_rank(static_cast<std::size_t>(p), 0);
  for (int r : expert_to_rank_) {
    if (r < 0 || r >= p) {
      throw InvalidArgument(fmt::format("placement: rank {} out of range [0, {})", r, p));
    }
    ++per_rank[static_cast<std::size_t>(r)];
  }
  const auto want = e / static_cast<std::size_t>(p);
  for (int r = 0; r < p; ++r) {
    if (per_rank[static_cast<std::size_t>(r)] != want) {
      throw InvalidArgument(fmt::format("placement: rank {} holds {} experts, expected {}", r,
                                        per_rank[static_cast<std::size_t>(r)], want));
    }
  }
}

void TopologySpec::validate() const {
  if (p < 1) throw InvalidArgument(fmt::format("topology: rank count must be positive, got {}", p));
  if (gpus_per_node < 1) {
    throw InvalidArgument(fmt::format("topology: gpus_per_node must be positive, got {}", gpus_per_node));
  }
  if (!(bw_intra > 0.0) || !(bw_inter > 0.0)) {
    throw InvalidArgument(
        fmt::format("topology: bandwidths must be positive (intra={}, inter={})", bw_intra, bw_inter));
  }
  if (!(fixed_latency >= 0.0)) {
    throw InvalidArgument(fmt::format("topology: fixed latency must be >= 0, got {}", fixed_latency));
  }
}

void TraceMetadata::validate() const {
  if (ep < 1) throw DataError(fmt::format("metadata: ep must be positive, got {}", ep));
  if (tp < 1) throw DataError(fmt::format("metadata: tp must be positive, got {}", tp));
  if (experts < 1) throw DataError(fmt::format("metadata: experts must be positive, got {}", experts));
  if (topk < 1 || topk > experts) {
    throw DataError(fmt::format("metadata: topk {} outside [1, experts={}]", topk, experts));
  }
  if (gbs < 0 || seqlen < 0 || hidden < 0 || bytes_per_elem < 0) {
    throw DataError("metadata: gbs, seqlen, hidden and bytes_per_elem must be non-negative");
  }
  if (local_tokens && *local_tokens < 0) {
    throw DataError(fmt::format("metadata: local_tokens must be non-negative, got {}", *local_tokens));
  }
}

void validate_record(const TraceMetadata& meta, const StepRecord& rec) {
  const auto& s = rec.send_counts;
  if (s.p() != meta.ep) {
    throw DataError(fmt::format("send_counts is {}x{} but metadata ep = {}", s.p(), s.p(), meta.ep));
  }
  for (int i = 0; i < s.p(); ++i) {
    for (int j = 0; j < s.p(); ++j) {
      if (s.at(i, j) < 0) {
        throw DataError(fmt::format("send_counts[{}][{}] = {} is negative", i, j, s.at(i, j)));
      }
    }
  }
  if (meta.local_tokens) {
    const Count want = *meta.local_tokens * meta.topk;
    for (int i = 0; i < s.p(); ++i) {
      if (s.row_sum(i) != want) {
        throw DataError(fmt::format("row {} of send_counts sums to {}, expected local_tokens*topk = {}",
                                    i, s.row_sum(i), want));
      }
    }
  }
  if (rec.expert_loads) {
    const auto& e = *rec.expert_loads;
    if (e.experts() != meta.experts) {
      throw DataError(
          fmt::format("expert_loads has {} entries but metadata experts = {}", e.experts(), meta.experts));
    }
    for (int l = 0; l < e.experts(); ++l) {
      if (e.counts[static_cast<std::size_t>(l)] < 0) {
        throw DataError(
            fmt::format("expert_loads[{}] = {} is negative", l, e.counts[static_cast<std::size_t>(l)]));
      }
    }
    if (e.total() != s.total()) {
      throw DataError(fmt::format("expert_loads sum {} differs from send_counts total {}", e.total(),
                                  s.total()));
    }
  }
  if (rec.rank_dispatch_ms) {
    const auto& t = *rec.rank_dispatch_ms;
    if (static_cast<int>(t.size()) != meta.ep) {
      throw DataError(
          fmt::format("rank_dispatch_ms has {} entries but metadata ep = {}", t.size(), meta.ep));
    }
    for (std::size_t r = 0; r < t.size(); ++r) {
      if (!(t[r] >= 0.0) || t[r] == std::numeric_limits<double>::infinity()) {
        throw DataError(fmt::format("rank_dispatch_ms[{}] = {} is not a finite non-negative value", r, t[r]));
      }
    }
  }
}

void DispatchTrace::validate() const {
  metadata.validate();
  std::set<std::pair<std::int64_t, int>> seen;
  for (std::size_t n = 0; n < records.size(); ++n) {
    const auto& rec = records[n];
    try {
      validate_record(metadata, rec);
    } catch (const DataError& e) {
      throw DataError(fmt::format("record {} (step {}, layer {}): {}", n, rec.step, rec.layer, e.what()));
    }
    if (!seen.emplace(rec.step, rec.layer).second) {
      throw DataError(
          fmt::format("record {}: duplicate (step {}, layer {})", n, rec.step, rec.layer));
    }
  }
}

RankLoads rank_loads_from(const SendCounts& s) {
  RankLoads c;
  c.counts.assign(static_cast<std::size_t>(s.p()), 0);
  for (int i = 0; i < s.p(); ++i) {
    for (int j = 0; j < s.p(); ++j) c.counts[static_cast<std::size_t>(j)] += s.at(i, j);
  }
  return c;
}

}  // namespace moeskew
