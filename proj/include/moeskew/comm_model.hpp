// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "moeskew/trace.hpp"

namespace moeskew {

/// Per-rank byte volumes split by tier. Self-traffic (S[j][j]) is excluded.
struct RankVolumes {
  double ingress_intra = 0.0;
  double ingress_inter = 0.0;
  double egress_intra = 0.0;
  double egress_inter = 0.0;
  int intra_partners = 0;  // distinct peers exchanging any traffic on-node
  int inter_partners = 0;  // distinct peers exchanging any traffic off-node
};

/// Works on a real-valued matrix so that the uniform reference (total / P^2
/// per cell) goes through exactly the same arithmetic as the input.
std::vector<RankVolumes> volumes(std::span<const double> row_major, int p, const TopologySpec& topo,
                                 double bytes_per_token);
std::vector<RankVolumes> volumes(const SendCounts& s, const TopologySpec& topo, double bytes_per_token);

struct CompletionReport {
  std::vector<double> per_rank_time;  // seconds
  double system_time = 0.0;           // max over ranks
  std::vector<double> intra_bytes;    // per-rank ingress, intra-node
  std::vector<double> inter_bytes;    // per-rank ingress, inter-node
  double skew_multiplier = 1.0;       // system_time / system_time(uniform, same total)
  int straggler = 0;                  // argmax rank
};

/// Per rank: fixed_latency + max(ingress_intra / bw_intra,
/// ingress_inter / bw_inter, egress_intra / bw_intra, egress_inter / bw_inter).
/// Intra and inter channels run in parallel; the slowest channel binds.
/// Throws InvalidArgument on a rank-count mismatch, non-positive bandwidth,
/// or non-positive bytes_per_token.
CompletionReport completion_time(const SendCounts& s, const TopologySpec& topo, double bytes_per_token);

/// Separates the bandwidth-side baseline from the skew-side multiplier.
/// Both are taken over the transfer term (time minus fixed latency), so
/// scaling S or the bandwidths leaves the multiplier untouched:
///   system_time = fixed_latency + baseline_seconds * multiplier.
struct SkewDecomposition {
  double baseline_seconds = 0.0;  // transfer time of the uniform matrix with equal total
  double multiplier = 1.0;        // transfer time of S / baseline_seconds
  double fixed_latency = 0.0;

  double reconstruct() const { return fixed_latency + baseline_seconds * multiplier; }
};

SkewDecomposition skew_baseline_decomposition(const SendCounts& s, const TopologySpec& topo,
                                              double bytes_per_token);

/// Uniform matrix with every entry (diagonal included) = total / P^2.
std::vector<double> uniform_like(const SendCounts& s);

}  // namespace moeskew
