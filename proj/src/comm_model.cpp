// SPDX-License-Identifier: Apache-2.0

#include "moeskew/comm_model.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "moeskew/error.hpp"

namespace moeskew {

namespace {

void check_inputs(int p, const TopologySpec& topo, double bytes_per_token) {
  topo.validate();
  if (topo.p != p) {
    throw InvalidArgument(fmt::format("comm model: send_counts has {} ranks, topology has {}", p, topo.p));
  }
  if (!(bytes_per_token > 0.0)) {
    throw InvalidArgument(fmt::format("comm model: bytes_per_token must be positive, got {}", bytes_per_token));
  }
}

double transfer_time(const RankVolumes& v, const TopologySpec& topo) {
  return std::max({v.ingress_intra / topo.bw_intra, v.ingress_inter / topo.bw_inter,
                   v.egress_intra / topo.bw_intra, v.egress_inter / topo.bw_inter});
}

std::vector<double> to_real(const SendCounts& s) {
  auto cells = s.row_major();
  return std::vector<double>(cells.begin(), cells.end());
}

// Max over ranks of the transfer term, and the argmax.
std::pair<double, int> max_transfer(const std::vector<RankVolumes>& vols, const TopologySpec& topo) {
  double best = 0.0;
  int arg = 0;
  for (std::size_t j = 0; j < vols.size(); ++j) {
    const double t = transfer_time(vols[j], topo);
    if (t > best) {
      best = t;
      arg = static_cast<int>(j);
    }
  }
  return {best, arg};
}

}  // namespace

std::vector<RankVolumes> volumes(std::span<const double> m, int p, const TopologySpec& topo,
                                 double bytes_per_token) {
  check_inputs(p, topo, bytes_per_token);
  if (m.size() != static_cast<std::size_t>(p) * static_cast<std::size_t>(p)) {
    throw InvalidArgument(fmt::format("comm model: matrix has {} cells, expected {}", m.size(), p * p));
  }
  std::vector<RankVolumes> out(static_cast<std::size_t>(p));
  auto cell = [&](int i, int j) { return m[static_cast<std::size_t>(i) * p + j]; };
  for (int j = 0; j < p; ++j) {
    auto& v = out[static_cast<std::size_t>(j)];
    for (int i = 0; i < p; ++i) {
      if (i == j) continue;
      const double in = cell(i, j) * bytes_per_token;
      const double eg = cell(j, i) * bytes_per_token;
      const bool local = topo.same_node(i, j);
      (local ? v.ingress_intra : v.ingress_inter) += in;
      (local ? v.egress_intra : v.egress_inter) += eg;
      if (in > 0.0 || eg > 0.0) ++(local ? v.intra_partners : v.inter_partners);
    }
  }
  return out;
}

std::vector<RankVolumes> volumes(const SendCounts& s, const TopologySpec& topo, double bytes_per_token) {
  return volumes(to_real(s), s.p(), topo, bytes_per_token);
}

std::vector<double> uniform_like(const SendCounts& s) {
  const double p2 = static_cast<double>(s.p()) * static_cast<double>(s.p());
  return std::vector<double>(static_cast<std::size_t>(p2), static_cast<double>(s.total()) / p2);
}

CompletionReport completion_time(const SendCounts& s, const TopologySpec& topo, double bytes_per_token) {
  const auto vols = volumes(s, topo, bytes_per_token);
  CompletionReport r;
  r.per_rank_time.reserve(vols.size());
  for (const auto& v : vols) {
    r.per_rank_time.push_back(topo.fixed_latency + transfer_time(v, topo));
    r.intra_bytes.push_back(v.ingress_intra);
    r.inter_bytes.push_back(v.ingress_inter);
  }
  const auto top = std::max_element(r.per_rank_time.begin(), r.per_rank_time.end());
  r.system_time = *top;
  r.straggler = static_cast<int>(top - r.per_rank_time.begin());

  const auto ref = volumes(uniform_like(s), s.p(), topo, bytes_per_token);
  double ref_time = 0.0;
  for (const auto& v : ref) ref_time = std::max(ref_time, topo.fixed_latency + transfer_time(v, topo));
  r.skew_multiplier = ref_time > 0.0 ? r.system_time / ref_time : 1.0;
  return r;
}

SkewDecomposition skew_baseline_decomposition(const SendCounts& s, const TopologySpec& topo,
                                              double bytes_per_token) {
  const auto [actual, _] = max_transfer(volumes(s, topo, bytes_per_token), topo);
  const auto [baseline, __] = max_transfer(volumes(uniform_like(s), s.p(), topo, bytes_per_token), topo);
  SkewDecomposition d;
  d.fixed_latency = topo.fixed_latency;
  d.baseline_seconds = baseline;
  d.multiplier = baseline > 0.0 ? actual / baseline : 1.0;
  return d;
}

}  // namespace moeskew
