#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tgnn/common.hpp"
#include "tgnn/rng.hpp"
#include "tgnn/tensor.hpp"

namespace tgnn {

struct Event {
  NodeId src = 0;
  NodeId dst = 0;
  TimeT t = 0;
};

// One edge event seen from a root node's perspective during attention.
struct NeighborRef {
  NodeId node = 0;   // the other endpoint
  EventId event = 0; // index into TemporalGraph::events
  double dt = 0;     // root time minus event time, >= 0
};

class TemporalGraph {
 public:
  NodeId num_nodes = 0;
  // Sources live in [0, boundary), destinations in [boundary, num_nodes).
  // boundary < 0 means the graph is not bipartite.
  NodeId bipartite_boundary = -1;
  std::size_t d_e = 0;

  std::vector<Event> events;  // ascending (t, id); id order is the file order
  Tensor edge_feats;          // [num_events, d_e], row i belongs to events[i]

  bool bipartite() const { return bipartite_boundary >= 0; }
  EventId num_events() const { return static_cast<EventId>(events.size()); }

  std::span<const double> edge_feat(EventId e) const {
    return d_e == 0 ? std::span<const double>{} : edge_feats.row(static_cast<std::size_t>(e));
  }

  const std::vector<EventId>& incident(NodeId v) const { return node_events_[static_cast<std::size_t>(v)]; }

  // Call after events/edge_feats are populated. Stable-sorts by timestamp and
  // rebuilds the per-node chronological index.
  void finalize() {
    if (num_nodes <= 0) throw config_error("graph: num_nodes must be positive");
    if (bipartite()) {
      if (bipartite_boundary <= 0 || bipartite_boundary >= num_nodes) {
        throw config_error("graph: bipartite boundary leaves an empty partition");
      }
    }
    std::vector<std::size_t> order(events.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return events[a].t < events[b].t; });
    std::vector<Event> sorted(events.size());
    Tensor feats({events.size(), d_e});
    for (std::size_t i = 0; i < order.size(); ++i) {
      sorted[i] = events[order[i]];
      if (d_e > 0) {
        auto src_row = edge_feats.row(order[i]);
        std::copy(src_row.begin(), src_row.end(), feats.row(i).begin());
      }
    }
    events = std::move(sorted);
    if (d_e > 0) edge_feats = std::move(feats);

    node_events_.assign(static_cast<std::size_t>(num_nodes), {});
    for (EventId e = 0; e < num_events(); ++e) {
      const Event& ev = events[static_cast<std::size_t>(e)];
      if (ev.src < 0 || ev.src >= num_nodes || ev.dst < 0 || ev.dst >= num_nodes) {
        throw config_error("graph: node id out of range at event " + std::to_string(e));
      }
      if (bipartite() && !(ev.src < bipartite_boundary && ev.dst >= bipartite_boundary)) {
        throw config_error("graph: event " + std::to_string(e) +
                           " does not cross the bipartite boundary");
      }
      node_events_[static_cast<std::size_t>(ev.src)].push_back(e);
      node_events_[static_cast<std::size_t>(ev.dst)].push_back(e);
    }
  }

 private:
  std::vector<std::vector<EventId>> node_events_;
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, std::size_t line_no, const char* what) {
  T value{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw parse_error("line " + std::to_string(line_no) + ": bad " + what + " field '" +
                      std::string(s) + "'");
  }
  return value;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

// Event CSV: header "src,dst,t[,f0,f1,...]", one event per row, 0-based node ids.
inline TemporalGraph load_events(const std::string& csv_path, NodeId num_nodes,
                                 NodeId bipartite_boundary, std::size_t d_e) {
  std::ifstream in(csv_path);
  if (!in) throw config_error("cannot open dataset file: " + csv_path);

  TemporalGraph g;
  g.num_nodes = num_nodes;
  g.bipartite_boundary = bipartite_boundary;
  g.d_e = d_e;

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw parse_error("line 1: missing header row");
  ++line_no;
  {
    auto cols = detail::split_csv(detail::trim(line));
    if (cols.size() != 3 + d_e || detail::trim(cols[0]) != "src" ||
        detail::trim(cols[1]) != "dst" || detail::trim(cols[2]) != "t") {
      throw parse_error("line 1: header must be src,dst,t followed by " +
                        std::to_string(d_e) + " feature columns");
    }
  }

  std::vector<double> feat_rows;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    auto cols = detail::split_csv(sv);
    if (cols.size() != 3 + d_e) {
      throw parse_error("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(3 + d_e) + " fields, got " + std::to_string(cols.size()));
    }
    Event ev;
    ev.src = detail::parse_number<NodeId>(detail::trim(cols[0]), line_no, "src");
    ev.dst = detail::parse_number<NodeId>(detail::trim(cols[1]), line_no, "dst");
    ev.t = detail::parse_number<double>(detail::trim(cols[2]), line_no, "t");
    if (ev.src < 0 || ev.src >= num_nodes || ev.dst < 0 || ev.dst >= num_nodes) {
      throw parse_error("line " + std::to_string(line_no) + ": node id out of range [0, " +
                        std::to_string(num_nodes) + ")");
    }
    g.events.push_back(ev);
    for (std::size_t f = 0; f < d_e; ++f) {
      feat_rows.push_back(detail::parse_number<double>(detail::trim(cols[3 + f]), line_no, "feature"));
    }
  }
  if (d_e > 0) {
    g.edge_feats = Tensor({g.events.size(), d_e});
    std::copy(feat_rows.begin(), feat_rows.end(), g.edge_feats.flat().begin());
  } else {
    g.edge_feats = Tensor({g.events.size(), 0});
  }
  g.finalize();
  return g;
}

// Sidecar metadata: key=value lines (num_nodes, bipartite_boundary, d_e).
// The sidecar sits next to the CSV with extension ".meta".
inline std::string sidecar_path(const std::string& csv_path) {
  auto pos = csv_path.find_last_of('.');
  auto slash = csv_path.find_last_of('/');
  if (pos == std::string::npos || (slash != std::string::npos && pos < slash)) {
    return csv_path + ".meta";
  }
  return csv_path.substr(0, pos) + ".meta";
}

struct DatasetMeta {
  NodeId num_nodes = 0;
  NodeId bipartite_boundary = -1;
  std::size_t d_e = 0;
};

inline DatasetMeta load_sidecar(const std::string& meta_path) {
  std::ifstream in(meta_path);
  if (!in) throw config_error("cannot open dataset sidecar: " + meta_path);
  DatasetMeta meta;
  bool saw_nodes = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = detail::trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    auto eq = sv.find('=');
    if (eq == std::string_view::npos) {
      throw parse_error("sidecar line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string_view key = detail::trim(sv.substr(0, eq));
    std::string_view val = detail::trim(sv.substr(eq + 1));
    if (key == "num_nodes") {
      meta.num_nodes = detail::parse_number<NodeId>(val, line_no, "num_nodes");
      saw_nodes = true;
    } else if (key == "bipartite_boundary") {
      meta.bipartite_boundary =
          val == "none" ? -1 : detail::parse_number<NodeId>(val, line_no, "bipartite_boundary");
    } else if (key == "d_e") {
      meta.d_e = detail::parse_number<std::size_t>(val, line_no, "d_e");
    } else {
      throw parse_error("sidecar line " + std::to_string(line_no) + ": unknown key '" +
                        std::string(key) + "'");
    }
  }
  if (!saw_nodes) throw config_error("sidecar missing num_nodes: " + meta_path);
  return meta;
}

inline TemporalGraph load_dataset(const std::string& csv_path) {
  DatasetMeta meta = load_sidecar(sidecar_path(csv_path));
  return load_events(csv_path, meta.num_nodes, meta.bipartite_boundary, meta.d_e);
}

inline void write_dataset(const TemporalGraph& g, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw config_error("cannot write dataset file: " + csv_path);
  out << "src,dst,t";
  for (std::size_t f = 0; f < g.d_e; ++f) out << ",f" << f;
  out << "\n";
  char buf[64];
  for (EventId e = 0; e < g.num_events(); ++e) {
    const Event& ev = g.events[static_cast<std::size_t>(e)];
    out << ev.src << ',' << ev.dst << ',';
    std::snprintf(buf, sizeof buf, "%.17g", ev.t);
    out << buf;
    for (std::size_t f = 0; f < g.d_e; ++f) {
      std::snprintf(buf, sizeof buf, "%.17g", g.edge_feat(e)[f]);
      out << ',' << buf;
    }
    out << "\n";
  }
  std::ofstream meta(sidecar_path(csv_path));
  meta << "num_nodes=" << g.num_nodes << "\n";
  if (g.bipartite()) {
    meta << "bipartite_boundary=" << g.bipartite_boundary << "\n";
  } else {
    meta << "bipartite_boundary=none\n";
  }
  meta << "d_e=" << g.d_e << "\n";
}

struct SplitRanges {
  EventId train_end = 0;  // train = [0, train_end)
  EventId val_end = 0;    // val = [train_end, val_end), test = [val_end, n)
};

// Split by event count. Timestamp-quantile splitting behaves badly on skewed
// timestamp distributions, so boundaries are event-index quantiles.
inline SplitRanges chronological_split(const TemporalGraph& g, double train_frac,
                                       double val_frac) {
  if (!(train_frac > 0.0 && train_frac < 1.0) || !(val_frac > 0.0 && val_frac < 1.0) ||
      train_frac + val_frac >= 1.0) {
    throw config_error("split fractions must lie in (0,1) and sum below 1");
  }
  const double n = static_cast<double>(g.num_events());
  SplitRanges s;
  s.train_end = static_cast<EventId>(std::llround(n * train_frac));
  s.val_end = static_cast<EventId>(std::llround(n * (train_frac + val_frac)));
  return s;
}

// Up to n most recent events of v strictly before time t, most recent first.
inline std::vector<NeighborRef> sample_recent_neighbors(const TemporalGraph& g, NodeId v,
                                                        TimeT t, std::size_t n) {
  const auto& inc = g.incident(v);
  // inc is ascending by (t, event id); find first event with time >= t
  auto it = std::lower_bound(inc.begin(), inc.end(), t, [&](EventId e, TimeT when) {
    return g.events[static_cast<std::size_t>(e)].t < when;
  });
  std::vector<NeighborRef> out;
  std::size_t have = static_cast<std::size_t>(it - inc.begin());
  std::size_t take = std::min(n, have);
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    EventId e = inc[have - 1 - i];
    const Event& ev = g.events[static_cast<std::size_t>(e)];
    NeighborRef ref;
    ref.node = ev.src == v ? ev.dst : ev.src;
    ref.event = e;
    ref.dt = t - ev.t;
    out.push_back(ref);
  }
  return out;
}

// Batch of consecutive events plus pre-sampled supports for the positive roots.
// Negative roots depend on the negative group in play, so their supports are
// sampled at use (sample_recent_neighbors is deterministic).
struct MiniBatchSpec {
  EventId begin = 0;
  EventId end = 0;
  std::vector<std::vector<NeighborRef>> src_support;  // one list per event
  std::vector<std::vector<NeighborRef>> dst_support;

  EventId size() const { return end - begin; }
};

inline std::vector<MiniBatchSpec> make_batches(const TemporalGraph& g, EventId begin,
                                               EventId end, EventId batch_size,
                                               std::size_t n_neighbors) {
  if (batch_size <= 0) throw config_error("batch size must be positive");
  if (begin < 0 || end > g.num_events() || begin > end) {
    throw config_error("batch range out of bounds");
  }
  std::vector<MiniBatchSpec> out;
  for (EventId s = begin; s < end; s += batch_size) {
    MiniBatchSpec spec;
    spec.begin = s;
    spec.end = std::min(end, s + batch_size);
    spec.src_support.reserve(static_cast<std::size_t>(spec.size()));
    for (EventId e = spec.begin; e < spec.end; ++e) {
      const Event& ev = g.events[static_cast<std::size_t>(e)];
      spec.src_support.push_back(sample_recent_neighbors(g, ev.src, ev.t, n_neighbors));
      spec.dst_support.push_back(sample_recent_neighbors(g, ev.dst, ev.t, n_neighbors));
    }
    out.push_back(std::move(spec));
  }
  return out;
}

// One negative destination per positive event. Bipartite graphs draw from the
// destination partition only; duplicates are allowed (uniform with replacement).
inline std::vector<NodeId> sample_negatives(const TemporalGraph& g, EventId batch_index,
                                            std::int64_t group, EventId count,
                                            std::uint64_t seed) {
  NodeId lo = g.bipartite() ? g.bipartite_boundary : 0;
  NodeId span = g.num_nodes - lo;
  if (span <= 0) throw config_error("negative sampling: empty destination partition");
  std::vector<NodeId> out(static_cast<std::size_t>(count));
  for (EventId i = 0; i < count; ++i) {
    Rng r(hash64(seed, 0x6e656761ull, static_cast<std::uint64_t>(batch_index),
                 static_cast<std::uint64_t>(group), static_cast<std::uint64_t>(i)));
    out[static_cast<std::size_t>(i)] = lo + r.next_below(span);
  }
  return out;
}

struct CapturedStats {
  std::vector<std::int64_t> captured;  // per node: batches in which it appears as endpoint
  std::vector<std::int64_t> degree;    // per node: incident event count
  std::int64_t total_captured = 0;
  std::int64_t total_mails = 0;  // 2 per event

  double info_loss() const {
    return total_mails == 0
               ? 0.0
               : 1.0 - static_cast<double>(total_captured) / static_cast<double>(total_mails);
  }
};

// Counts, per node, how many of its events survive per-batch mail coalescing
// (one kept mail per node per batch). Larger batches merge more appearances.
inline CapturedStats captured_events_analysis(const TemporalGraph& g, EventId batch_size) {
  if (batch_size <= 0) throw config_error("batch size must be positive");
  CapturedStats stats;
  stats.captured.assign(static_cast<std::size_t>(g.num_nodes), 0);
  stats.degree.assign(static_cast<std::size_t>(g.num_nodes), 0);
  std::vector<EventId> last_batch(static_cast<std::size_t>(g.num_nodes), -1);
  for (EventId e = 0; e < g.num_events(); ++e) {
    const Event& ev = g.events[static_cast<std::size_t>(e)];
    EventId b = e / batch_size;
    for (NodeId v : {ev.src, ev.dst}) {
      ++stats.degree[static_cast<std::size_t>(v)];
      if (last_batch[static_cast<std::size_t>(v)] != b) {
        last_batch[static_cast<std::size_t>(v)] = b;
        ++stats.captured[static_cast<std::size_t>(v)];
        ++stats.total_captured;
      }
    }
  }
  stats.total_mails = 2 * g.num_events();
  return stats;
}

}  // namespace tgnn
