#pragma once

#include <cmath>
#include <vector>

#include "tgnn/rng.hpp"
#include "tgnn/temporal_graph.hpp"

namespace tgnn {

// Synthetic interaction stream with the shape of real activity logs:
// zipf-ish popularity on both sides, bursty repeat interactions, and a small
// planted preference set per source so there is a learnable link signal.
struct SynthParams {
  NodeId nodes = 1000;
  EventId events = 10000;
  double burst_prob = 0.2;       // continue the previous source in a rapid burst
  double pref_prob = 0.85;       // event goes to one of the source's preferred dsts
  int prefs_per_src = 3;
  double src_frac = 0.5;         // bipartite source share of nodes
  bool bipartite = true;
  std::size_t d_e = 0;
  double zipf_s = 1.0;
  std::uint64_t seed = 1;
};

namespace detail {

// Inverse-CDF zipf sampler over [0, n).
class ZipfSampler {
 public:
  ZipfSampler(std::int64_t n, double s) : cdf_(static_cast<std::size_t>(n)) {
    double acc = 0;
    for (std::int64_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
      cdf_[static_cast<std::size_t>(r)] = acc;
    }
    total_ = acc;
  }

  std::int64_t draw(Rng& rng) const {
    double u = rng.next_unit() * total_;
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<std::int64_t>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
  double total_ = 0;
};

}  // namespace detail

inline TemporalGraph gen_synthetic(const SynthParams& p) {
  if (p.nodes < 2) throw config_error("gen: need at least 2 nodes");
  if (p.events <= 0) throw config_error("gen: need a positive event count");
  if (p.burst_prob < 0 || p.burst_prob >= 1) throw config_error("gen: burst-prob must be in [0,1)");

  TemporalGraph g;
  g.num_nodes = p.nodes;
  g.d_e = p.d_e;

  NodeId n_src = p.nodes, dst_lo = 0, n_dst = p.nodes;
  if (p.bipartite) {
    n_src = std::max<NodeId>(1, static_cast<NodeId>(std::llround(static_cast<double>(p.nodes) * p.src_frac)));
    n_src = std::min(n_src, p.nodes - 1);
    dst_lo = n_src;
    n_dst = p.nodes - n_src;
    g.bipartite_boundary = n_src;
  }

  detail::ZipfSampler src_pop(n_src, p.zipf_s);
  detail::ZipfSampler dst_pop(n_dst, p.zipf_s);

  // Planted preferences: fixed small destination set per source.
  auto preferred = [&](NodeId src, int slot) {
    Rng r(hash64(p.seed, 0x70726566ull, static_cast<std::uint64_t>(src),
                 static_cast<std::uint64_t>(slot)));
    return dst_lo + r.next_below(n_dst);
  };

  g.events.reserve(static_cast<std::size_t>(p.events));
  std::vector<double> feats;
  feats.reserve(static_cast<std::size_t>(p.events) * p.d_e);

  Rng rng(hash64(p.seed, 0x67656e65ull));
  double t = 0;
  NodeId prev_src = -1;
  for (EventId e = 0; e < p.events; ++e) {
    bool burst = prev_src >= 0 && rng.next_unit() < p.burst_prob;
    NodeId src = burst ? prev_src : src_pop.draw(rng);
    NodeId dst;
    if (p.prefs_per_src > 0 && rng.next_unit() < p.pref_prob) {
      dst = preferred(src, static_cast<int>(rng.next_below(p.prefs_per_src)));
    } else {
      dst = dst_lo + dst_pop.draw(rng);
    }
    if (!p.bipartite && dst == src) dst = (dst + 1) % p.nodes;

    double gap = -std::log(std::max(rng.next_unit(), 1e-12));
    t += burst ? gap * 0.01 : gap;

    g.events.push_back({src, dst, t});
    for (std::size_t f = 0; f < p.d_e; ++f) feats.push_back(0.1 * rng.next_normal());
    prev_src = src;
  }

  g.edge_feats = Tensor({g.events.size(), p.d_e});
  std::copy(feats.begin(), feats.end(), g.edge_feats.flat().begin());
  g.finalize();
  return g;
}

}  // namespace tgnn
