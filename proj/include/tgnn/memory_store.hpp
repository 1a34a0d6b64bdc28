#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <vector>

#include "tgnn/temporal_graph.hpp"
#include "tgnn/tensor.hpp"

namespace tgnn {

// Per-node dynamic state. The cached mail keeps only the memory-dependent
// halves plus three scalars; the time encoding is recomputed with the live
// omega at consumption and the edge feature is looked up from the graph.
struct NodeMemoryState {
  NodeId num_nodes = 0;
  std::size_t d_mem = 0;

  Tensor memory;                  // [num_nodes, d_mem]
  std::vector<TimeT> last_update; // newest event time folded into the node's state
  Tensor mail_mem;                // [num_nodes, 2*d_mem], {s_self | s_other} at generation
  std::vector<TimeT> mail_t;      // generating event time
  std::vector<double> mail_dt;    // t - t_minus at generation
  std::vector<EventId> mail_event;  // -1 when no mail is cached

  bool has_mail(NodeId v) const { return mail_event[static_cast<std::size_t>(v)] >= 0; }
};

inline NodeMemoryState init_state(NodeId num_nodes, std::size_t d_mem) {
  NodeMemoryState s;
  s.num_nodes = num_nodes;
  s.d_mem = d_mem;
  s.memory = Tensor({static_cast<std::size_t>(num_nodes), d_mem});
  s.last_update.assign(static_cast<std::size_t>(num_nodes), 0.0);
  s.mail_mem = Tensor({static_cast<std::size_t>(num_nodes), 2 * d_mem});
  s.mail_t.assign(static_cast<std::size_t>(num_nodes), 0.0);
  s.mail_dt.assign(static_cast<std::size_t>(num_nodes), 0.0);
  s.mail_event.assign(static_cast<std::size_t>(num_nodes), -1);
  return s;
}

inline void reset_state(NodeMemoryState& s) {
  s.memory.zero();
  std::fill(s.last_update.begin(), s.last_update.end(), 0.0);
  s.mail_mem.zero();
  std::fill(s.mail_t.begin(), s.mail_t.end(), 0.0);
  std::fill(s.mail_dt.begin(), s.mail_dt.end(), 0.0);
  std::fill(s.mail_event.begin(), s.mail_event.end(), -1);
}

// Mail rows as exchanged through buffers: 2*d_mem memory values followed by
// (event time, delta-t, event index).
inline std::size_t mail_row_width(std::size_t d_mem) { return 2 * d_mem + 3; }

struct MailRowView {
  std::span<const double> mem2;
  TimeT t = 0;
  double dt = 0;
  EventId event = -1;
};

inline MailRowView unpack_mail_row(std::span<const double> row, std::size_t d_mem) {
  require_len(row, mail_row_width(d_mem), "unpack_mail_row");
  MailRowView v;
  v.mem2 = row.subspan(0, 2 * d_mem);
  v.t = row[2 * d_mem];
  v.dt = row[2 * d_mem + 1];
  v.event = static_cast<EventId>(row[2 * d_mem + 2]);
  return v;
}

inline void pack_mail_row(const NodeMemoryState& s, NodeId v, std::span<double> row) {
  require_len(row, mail_row_width(s.d_mem), "pack_mail_row");
  auto src = s.mail_mem.row(static_cast<std::size_t>(v));
  std::copy(src.begin(), src.end(), row.begin());
  row[2 * s.d_mem] = s.mail_t[static_cast<std::size_t>(v)];
  row[2 * s.d_mem + 1] = s.mail_dt[static_cast<std::size_t>(v)];
  row[2 * s.d_mem + 2] = static_cast<double>(s.mail_event[static_cast<std::size_t>(v)]);
}

// One directed mail produced by an event, before coalescing.
struct PendingMail {
  NodeId node = 0;
  EventId event = -1;
  TimeT t = 0;
  double dt = 0;
  std::vector<double> mem2;  // {s_node | s_other} snapshot at generation
};

// Builds both directed mails for each event from the pre-batch state.
// Memory values and last_update are read as-is; nothing is mutated.
inline std::vector<PendingMail> generate_mails(const NodeMemoryState& s,
                                               std::span<const Event> events,
                                               EventId first_event_id) {
  std::vector<PendingMail> out;
  out.reserve(events.size() * 2);
  const std::size_t d = s.d_mem;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& ev = events[i];
    const EventId eid = first_event_id + static_cast<EventId>(i);
    for (int side = 0; side < 2; ++side) {
      const NodeId self = side == 0 ? ev.src : ev.dst;
      const NodeId other = side == 0 ? ev.dst : ev.src;
      PendingMail m;
      m.node = self;
      m.event = eid;
      m.t = ev.t;
      m.dt = ev.t - s.last_update[static_cast<std::size_t>(self)];
      m.mem2.resize(2 * d);
      auto a = s.memory.row(static_cast<std::size_t>(self));
      auto b = s.memory.row(static_cast<std::size_t>(other));
      std::copy(a.begin(), a.end(), m.mem2.begin());
      std::copy(b.begin(), b.end(), m.mem2.begin() + d);
      out.push_back(std::move(m));
    }
  }
  return out;
}

// Keeps the most recent mail per node; ties on timestamp go to the larger
// event index. Result is ordered by node id for deterministic writes.
inline std::vector<PendingMail> comb(std::vector<PendingMail> mails) {
  std::map<NodeId, PendingMail> best;
  for (auto& m : mails) {
    auto it = best.find(m.node);
    if (it == best.end() || m.t > it->second.t ||
        (m.t == it->second.t && m.event > it->second.event)) {
      best[m.node] = std::move(m);
    }
  }
  std::vector<PendingMail> out;
  out.reserve(best.size());
  for (auto& [node, m] : best) out.push_back(std::move(m));
  return out;
}

struct StalenessReport {
  double mean_staleness = 0;  // mean over root uses of t_use - last_update
  double info_loss = 0;       // dropped mails / generated mails for the batch
  std::int64_t generated = 0;
  std::int64_t kept = 0;
};

inline StalenessReport staleness_report(const NodeMemoryState& s,
                                        std::span<const Event> events) {
  StalenessReport r;
  if (events.empty()) return r;
  double acc = 0;
  std::vector<NodeId> roots;
  roots.reserve(events.size() * 2);
  for (const Event& ev : events) {
    acc += ev.t - s.last_update[static_cast<std::size_t>(ev.src)];
    acc += ev.t - s.last_update[static_cast<std::size_t>(ev.dst)];
    roots.push_back(ev.src);
    roots.push_back(ev.dst);
  }
  r.generated = static_cast<std::int64_t>(roots.size());
  std::sort(roots.begin(), roots.end());
  r.kept = static_cast<std::int64_t>(std::unique(roots.begin(), roots.end()) - roots.begin());
  r.mean_staleness = acc / static_cast<double>(r.generated);
  r.info_loss = 1.0 - static_cast<double>(r.kept) / static_cast<double>(r.generated);
  return r;
}

// Applies one root write: new memory value, fresh cached mail, and the
// last_update advance to the cached mail's event time.
inline void apply_root_write(NodeMemoryState& s, NodeId v,
                             std::span<const double> new_memory,
                             const MailRowView& mail) {
  require_len(new_memory, s.d_mem, "apply_root_write memory");
  auto dst = s.memory.row(static_cast<std::size_t>(v));
  std::copy(new_memory.begin(), new_memory.end(), dst.begin());
  auto mdst = s.mail_mem.row(static_cast<std::size_t>(v));
  std::copy(mail.mem2.begin(), mail.mem2.end(), mdst.begin());
  const std::size_t vi = static_cast<std::size_t>(v);
  s.mail_t[vi] = mail.t;
  s.mail_dt[vi] = mail.dt;
  s.mail_event[vi] = mail.event;
  s.last_update[vi] = mail.t;
}

}  // namespace tgnn
