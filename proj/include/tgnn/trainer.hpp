#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tgnn/common.hpp"
#include "tgnn/memory_daemon.hpp"
#include "tgnn/memory_store.hpp"
#include "tgnn/model.hpp"
#include "tgnn/oplog.hpp"
#include "tgnn/optimizer.hpp"
#include "tgnn/parallel.hpp"
#include "tgnn/shared_buffers.hpp"
#include "tgnn/sync.hpp"
#include "tgnn/temporal_graph.hpp"

// Training engine. A trainer's barrier step runs over one local event slice:
// freshen memory for every support node, embed roots through attention,
// decode positive/negative pairs, backprop, and (on the first sub-iteration
// of a stint) hand the root memory updates to the daemon. The sequential
// runner drives the exact same step code against a directly owned memory
// state, so daemon-backed and daemon-free runs can be compared bitwise.

namespace tgnn {

// One embedding request: a node at a query time plus its sampled neighbors.
struct RootEmbed {
  NodeId node = 0;
  TimeT t = 0;
  std::vector<NeighborRef> nbrs;
};

// Everything one trainer needs for one sub-iteration over its event slice.
// Roots are event-major (source, destination, negative); supports is the
// sorted deduplicated union of roots and their neighbors and doubles as the
// memory read request.
struct SubBatchPlan {
  EventId begin = 0;
  EventId end = 0;
  std::vector<RootEmbed> roots;
  std::vector<NodeId> supports;
};

inline std::size_t support_row(const std::vector<NodeId>& nodes, NodeId v) {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), v);
  if (it == nodes.end() || *it != v) {
    throw protocol_error("support lookup: node " + std::to_string(v) + " not in read view");
  }
  return static_cast<std::size_t>(it - nodes.begin());
}

inline MailRowView state_mail_view(const NodeMemoryState& s, NodeId v) {
  const auto u = static_cast<std::size_t>(v);
  MailRowView mv;
  mv.mem2 = s.mail_mem.row(u);
  mv.t = s.mail_t[u];
  mv.dt = s.mail_dt[u];
  mv.event = s.mail_event[u];
  return mv;
}

inline SubBatchPlan plan_sub_batch(const TemporalGraph& g, EventId begin, EventId end,
                                   std::span<const NodeId> negatives, std::size_t n_neighbors) {
  if (begin < 0 || end > g.num_events() || begin > end) {
    throw config_error("plan_sub_batch: event range out of bounds");
  }
  if (negatives.size() != static_cast<std::size_t>(end - begin)) {
    throw config_error("plan_sub_batch: one negative per event required");
  }
  SubBatchPlan plan;
  plan.begin = begin;
  plan.end = end;
  plan.roots.reserve(static_cast<std::size_t>(3 * (end - begin)));
  std::vector<NodeId> nodes;
  for (EventId e = begin; e < end; ++e) {
    const Event& ev = g.events[static_cast<std::size_t>(e)];
    const NodeId cand[3] = {ev.src, ev.dst, negatives[static_cast<std::size_t>(e - begin)]};
    for (NodeId v : cand) {
      RootEmbed re;
      re.node = v;
      re.t = ev.t;
      re.nbrs = sample_recent_neighbors(g, v, ev.t, n_neighbors);
      nodes.push_back(v);
      for (const NeighborRef& ref : re.nbrs) nodes.push_back(ref.node);
      plan.roots.push_back(std::move(re));
    }
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  plan.supports = std::move(nodes);
  return plan;
}

// s_hat = GRU(rebuilt mail, stored memory) when a cached mail exists, else the
// stored memory unchanged. The time term is re-encoded with the live omega so
// gradients reach it; the stored memory halves inside the mail are constants.
inline bool freshen_memory(const TemporalGraph& g, const ModelParams& p,
                           std::span<const double> mem_row, const MailRowView& mv,
                           std::span<double> out, GruTape* tape) {
  const std::size_t d = p.cfg.d_mem;
  if (mv.event < 0) {
    std::copy(mem_row.begin(), mem_row.end(), out.begin());
    return false;
  }
  std::vector<double> mail(p.cfg.mail_dim());
  make_mail(p.omega.flat(), mv.mem2.subspan(0, d), mv.mem2.subspan(d, d), mv.dt,
            g.edge_feat(mv.event), mail);
  gru_update(p.gru, mail, mem_row, out, tape);
  return true;
}

// Attention embedding of one root at its query time. Rows are assembled as
// {s_hat | static | (edge features) | phi(dt)}; the query uses dt = 0.
inline void embed_root(const TemporalGraph& g, const ModelParams& p, const RootEmbed& re,
                       const std::vector<NodeId>& nodes,
                       const std::vector<std::vector<double>>& s_hat, std::span<double> h_out,
                       AttnTape* tape) {
  const ModelConfig& cfg = p.cfg;
  const std::size_t d = cfg.d_mem, ds = cfg.d_static;

  std::vector<double> q_in(cfg.q_in_dim());
  {
    const std::size_t u = support_row(nodes, re.node);
    std::copy(s_hat[u].begin(), s_hat[u].end(), q_in.begin());
    auto stat = p.static_table.row(static_cast<std::size_t>(re.node));
    std::copy(stat.begin(), stat.end(), q_in.begin() + d);
    time_encode(p.omega.flat(), 0.0, std::span<double>(q_in).subspan(d + ds));
  }

  std::vector<std::vector<double>> kv_in(re.nbrs.size());
  for (std::size_t m = 0; m < re.nbrs.size(); ++m) {
    const NeighborRef& ref = re.nbrs[m];
    std::vector<double>& row = kv_in[m];
    row.resize(cfg.kv_in_dim());
    const std::size_t w = support_row(nodes, ref.node);
    std::copy(s_hat[w].begin(), s_hat[w].end(), row.begin());
    auto stat = p.static_table.row(static_cast<std::size_t>(ref.node));
    std::copy(stat.begin(), stat.end(), row.begin() + d);
    auto ef = g.edge_feat(ref.event);
    std::copy(ef.begin(), ef.end(), row.begin() + d + ds);
    time_encode(p.omega.flat(), ref.dt, std::span<double>(row).subspan(d + ds + cfg.d_e));
  }

  attention_forward(p.attn, q_in, kv_in, h_out, tape);
}

struct SubStepStats {
  double loss = 0;
  EventId events = 0;
};

// Forward and backward over one planned sub-iteration. Gradients accumulate
// into grads (caller zeroes). s_hat_out, when given, receives the freshened
// memory of every support node, aligned with plan.supports; the first
// sub-iteration's values become the root memory writes.
inline SubStepStats sub_step(const TemporalGraph& g, const ModelParams& p,
                             const SubBatchPlan& plan, const ReadView& view, ModelGrads& grads,
                             std::vector<std::vector<double>>* s_hat_out) {
  const ModelConfig& cfg = p.cfg;
  const std::size_t d = cfg.d_mem, ds = cfg.d_static, da = cfg.d_attn;
  const std::size_t n = view.nodes.size();
  if (plan.supports.size() != n) {
    throw protocol_error("sub_step: read view does not match the support request");
  }

  // Freshen every support node once; events in the slice all see the same
  // pre-batch state.
  std::vector<std::vector<double>> local_s_hat;
  std::vector<std::vector<double>>& s_hat = s_hat_out ? *s_hat_out : local_s_hat;
  s_hat.assign(n, {});
  std::vector<GruTape> tapes(n);
  std::vector<char> has_tape(n, 0);
  std::vector<double> mail_dts(n, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    s_hat[u].resize(d);
    MailRowView mv = unpack_mail_row(view.mail.row(u), d);
    has_tape[u] = freshen_memory(g, p, view.mem.row(u), mv, s_hat[u], &tapes[u]) ? 1 : 0;
    mail_dts[u] = mv.dt;
  }

  const std::size_t R = plan.roots.size();
  std::vector<std::vector<double>> h(R);
  std::vector<AttnTape> atapes(R);
  for (std::size_t r = 0; r < R; ++r) {
    h[r].resize(da);
    embed_root(g, p, plan.roots[r], view.nodes, s_hat, h[r], &atapes[r]);
  }

  const std::size_t ne = static_cast<std::size_t>(plan.end - plan.begin);
  std::vector<double> pos(ne), neg(ne);
  std::vector<DecoderTape> ptapes(ne), ntapes(ne);
  for (std::size_t e = 0; e < ne; ++e) {
    pos[e] = decode_link(p.dec, h[3 * e], h[3 * e + 1], &ptapes[e]);
    neg[e] = decode_link(p.dec, h[3 * e], h[3 * e + 2], &ntapes[e]);
  }

  SubStepStats stats;
  stats.events = plan.end - plan.begin;
  stats.loss = bce_loss(pos, neg);
  if (!std::isfinite(stats.loss)) {
    throw numeric_error("non-finite training loss on events [" + std::to_string(plan.begin) +
                        ", " + std::to_string(plan.end) + ")");
  }

  std::vector<double> dpos(ne), dneg(ne);
  bce_backward(pos, neg, dpos, dneg);

  std::vector<std::vector<double>> dh(R, std::vector<double>(da, 0.0));
  for (std::size_t e = 0; e < ne; ++e) {
    decode_link_backward(p.dec, ptapes[e], dpos[e], grads.dec, dh[3 * e], dh[3 * e + 1]);
    decode_link_backward(p.dec, ntapes[e], dneg[e], grads.dec, dh[3 * e], dh[3 * e + 2]);
  }

  // Attention backward, routing input gradients to s_hat, the static table
  // and the time encoder. Edge features are data, their slice is dropped.
  std::vector<std::vector<double>> ds_hat(n, std::vector<double>(d, 0.0));
  std::vector<double> dq(cfg.q_in_dim());
  std::vector<std::vector<double>> dkv;
  for (std::size_t r = 0; r < R; ++r) {
    std::fill(dq.begin(), dq.end(), 0.0);
    attention_backward(p.attn, atapes[r], dh[r], grads.attn, dq, dkv);
    const RootEmbed& re = plan.roots[r];
    const std::size_t u = support_row(view.nodes, re.node);
    axpy(1.0, std::span<const double>(dq).subspan(0, d), ds_hat[u]);
    if (ds) {
      axpy(1.0, std::span<const double>(dq).subspan(d, ds),
           grads.static_table.row(static_cast<std::size_t>(re.node)));
    }
    time_encode_backward(p.omega.flat(), 0.0, std::span<const double>(dq).subspan(d + ds),
                         grads.omega.flat());
    for (std::size_t m = 0; m < re.nbrs.size(); ++m) {
      const NeighborRef& ref = re.nbrs[m];
      const std::size_t w = support_row(view.nodes, ref.node);
      std::span<const double> row(dkv[m]);
      axpy(1.0, row.subspan(0, d), ds_hat[w]);
      if (ds) {
        axpy(1.0, row.subspan(d, ds),
             grads.static_table.row(static_cast<std::size_t>(ref.node)));
      }
      time_encode_backward(p.omega.flat(), ref.dt, row.subspan(d + ds + cfg.d_e),
                           grads.omega.flat());
    }
  }

  // Memory freshening backward. Nodes without a cached mail passed the stored
  // memory through unchanged, which is a constant, so their gradient stops.
  std::vector<double> dmail(cfg.mail_dim());
  for (std::size_t u = 0; u < n; ++u) {
    if (!has_tape[u]) continue;
    std::fill(dmail.begin(), dmail.end(), 0.0);
    gru_backward(p.gru, tapes[u], ds_hat[u], grads.gru, dmail);
    time_encode_backward(p.omega.flat(), mail_dts[u],
                         std::span<const double>(dmail).subspan(2 * d, cfg.d_time),
                         grads.omega.flat());
  }

  return stats;
}

struct RootWrites {
  std::vector<NodeId> nodes;  // ascending
  Tensor mem;                 // [n, d_mem]
  Tensor mail;                // [n, mail_row_width]
};

// Root memory updates for one slice: the freshened memory becomes the new
// stored memory, and both directed mails per event are built from the stale
// read view, then coalesced to the most recent one per node. Time deltas are
// measured from the read view's cached mail time (zero when none).
inline RootWrites build_root_writes(const TemporalGraph& g, std::size_t d_mem,
                                    const SubBatchPlan& plan, const ReadView& view,
                                    const std::vector<std::vector<double>>& s_hat) {
  std::vector<PendingMail> pending;
  pending.reserve(static_cast<std::size_t>(2 * (plan.end - plan.begin)));
  for (EventId e = plan.begin; e < plan.end; ++e) {
    const Event& ev = g.events[static_cast<std::size_t>(e)];
    const NodeId pairs[2][2] = {{ev.src, ev.dst}, {ev.dst, ev.src}};
    for (const auto& pr : pairs) {
      const std::size_t u = support_row(view.nodes, pr[0]);
      const std::size_t o = support_row(view.nodes, pr[1]);
      MailRowView mv = unpack_mail_row(view.mail.row(u), d_mem);
      const TimeT t_minus = mv.event >= 0 ? mv.t : 0.0;
      PendingMail m;
      m.node = pr[0];
      m.event = e;
      m.t = ev.t;
      m.dt = ev.t - t_minus;
      m.mem2.resize(2 * d_mem);
      auto self_mem = view.mem.row(u);
      auto other_mem = view.mem.row(o);
      std::copy(self_mem.begin(), self_mem.end(), m.mem2.begin());
      std::copy(other_mem.begin(), other_mem.end(),
                m.mem2.begin() + static_cast<std::ptrdiff_t>(d_mem));
      pending.push_back(std::move(m));
    }
  }
  std::vector<PendingMail> kept = comb(std::move(pending));

  RootWrites w;
  w.nodes.reserve(kept.size());
  w.mem = Tensor({kept.size(), d_mem});
  w.mail = Tensor({kept.size(), mail_row_width(d_mem)});
  for (std::size_t idx = 0; idx < kept.size(); ++idx) {
    const PendingMail& m = kept[idx];
    w.nodes.push_back(m.node);
    const std::size_t u = support_row(view.nodes, m.node);
    auto mem_row = w.mem.row(idx);
    std::copy(s_hat[u].begin(), s_hat[u].end(), mem_row.begin());
    auto mail_row = w.mail.row(idx);
    std::copy(m.mem2.begin(), m.mem2.end(), mail_row.begin());
    mail_row[2 * d_mem] = m.t;
    mail_row[2 * d_mem + 1] = m.dt;
    mail_row[2 * d_mem + 2] = static_cast<double>(m.event);
  }
  return w;
}

// Advances a memory state through one batch of events without attention:
// roots are freshened from their cached mails and the batch's coalesced new
// mails are deposited. The memory trajectory matches what a training
// traversal over the same batches leaves behind, for any slice count.
inline void replay_batch(const TemporalGraph& g, const ModelParams& p, NodeMemoryState& state,
                         EventId begin, EventId end) {
  if (begin >= end) return;
  std::vector<NodeId> roots;
  roots.reserve(static_cast<std::size_t>(2 * (end - begin)));
  for (EventId e = begin; e < end; ++e) {
    const Event& ev = g.events[static_cast<std::size_t>(e)];
    roots.push_back(ev.src);
    roots.push_back(ev.dst);
  }
  std::sort(roots.begin(), roots.end());
  roots.erase(std::unique(roots.begin(), roots.end()), roots.end());

  // Freshen all roots against the pre-batch state before anything mutates.
  std::vector<std::vector<double>> s_hat(roots.size());
  for (std::size_t idx = 0; idx < roots.size(); ++idx) {
    const NodeId v = roots[idx];
    s_hat[idx].resize(state.d_mem);
    freshen_memory(g, p, state.memory.row(static_cast<std::size_t>(v)), state_mail_view(state, v),
                   s_hat[idx], nullptr);
  }

  std::span<const Event> events(g.events.data() + begin, static_cast<std::size_t>(end - begin));
  std::vector<PendingMail> kept = comb(generate_mails(state, events, begin));
  for (const PendingMail& m : kept) {
    const std::size_t idx =
        static_cast<std::size_t>(std::lower_bound(roots.begin(), roots.end(), m.node) -
                                 roots.begin());
    MailRowView mv;
    mv.mem2 = std::span<const double>(m.mem2);
    mv.t = m.t;
    mv.dt = m.dt;
    mv.event = m.event;
    apply_root_write(state, m.node, s_hat[idx], mv);
  }
}

struct EvalResult {
  double mrr = 0;
  std::int64_t queries = 0;
};

// Link-prediction MRR over an event range. Memory is rebuilt from scratch by
// replaying everything before eval_begin with the current weights, then
// evolves through the evaluated batches. Each event ranks its true
// destination against uniformly drawn candidates (true destination excluded,
// duplicates allowed); ties count against the true destination.
inline EvalResult evaluate_mrr(const TemporalGraph& g, const ModelParams& p, EventId eval_begin,
                               EventId eval_end, EventId batch_size, int n_negatives,
                               std::uint64_t seed) {
  if (batch_size <= 0) throw config_error("evaluate_mrr: batch size must be positive");
  if (eval_begin < 0 || eval_end > g.num_events() || eval_begin > eval_end) {
    throw config_error("evaluate_mrr: event range out of bounds");
  }
  const ModelConfig& cfg = p.cfg;
  NodeMemoryState state = init_state(g.num_nodes, cfg.d_mem);
  for (EventId b = 0; b < eval_begin; b += batch_size) {
    replay_batch(g, p, state, b, std::min(eval_begin, b + batch_size));
  }

  const NodeId lo = g.bipartite() ? g.bipartite_boundary : 0;
  const NodeId span = g.num_nodes - lo;
  if (n_negatives > 0 && span < 2) {
    throw config_error("evaluate_mrr: destination partition too small to sample distractors");
  }

  const std::size_t per_event = 2 + static_cast<std::size_t>(n_negatives);
  EvalResult res;
  double acc = 0;
  for (EventId b = eval_begin; b < eval_end; b += batch_size) {
    const EventId e_end = std::min(eval_end, b + batch_size);
    std::vector<RootEmbed> roots;
    roots.reserve(static_cast<std::size_t>(e_end - b) * per_event);
    std::vector<NodeId> nodes;
    for (EventId e = b; e < e_end; ++e) {
      const Event& ev = g.events[static_cast<std::size_t>(e)];
      std::vector<NodeId> cand;
      cand.reserve(per_event);
      cand.push_back(ev.src);
      cand.push_back(ev.dst);
      for (int s = 0; s < n_negatives; ++s) {
        Rng r(hash64(seed, 0x6576616cull, static_cast<std::uint64_t>(e),
                     static_cast<std::uint64_t>(s)));
        NodeId v;
        do {
          v = lo + r.next_below(span);
        } while (v == ev.dst);
        cand.push_back(v);
      }
      for (NodeId v : cand) {
        RootEmbed re;
        re.node = v;
        re.t = ev.t;
        re.nbrs = sample_recent_neighbors(g, v, ev.t, cfg.n_neighbors);
        nodes.push_back(v);
        for (const NeighborRef& ref : re.nbrs) nodes.push_back(ref.node);
        roots.push_back(std::move(re));
      }
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());

    std::vector<std::vector<double>> s_hat(nodes.size());
    for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
      const NodeId v = nodes[idx];
      s_hat[idx].resize(cfg.d_mem);
      freshen_memory(g, p, state.memory.row(static_cast<std::size_t>(v)),
                     state_mail_view(state, v), s_hat[idx], nullptr);
    }

    std::vector<std::vector<double>> h(roots.size());
    for (std::size_t r = 0; r < roots.size(); ++r) {
      h[r].resize(cfg.d_attn);
      embed_root(g, p, roots[r], nodes, s_hat, h[r], nullptr);
    }

    for (EventId e = b; e < e_end; ++e) {
      const std::size_t base = static_cast<std::size_t>(e - b) * per_event;
      const double truth = decode_link(p.dec, h[base], h[base + 1], nullptr);
      std::int64_t worse_or_equal = 0;
      for (int s = 0; s < n_negatives; ++s) {
        const double logit = decode_link(p.dec, h[base], h[base + 2 + s], nullptr);
        if (logit >= truth) ++worse_or_equal;
      }
      acc += 1.0 / static_cast<double>(1 + worse_or_equal);
      ++res.queries;
    }

    replay_batch(g, p, state, b, e_end);
  }
  if (res.queries > 0) res.mrr = acc / static_cast<double>(res.queries);
  return res;
}

// Rank-ordered sum of the active trainers' gradient slots divided by the
// active count. Every replica runs this identically, which keeps the weights
// bitwise equal without any reduction tree.
inline void average_active_grads(const Assignment& asg, std::int64_t barrier, int num_trainers,
                                 const std::vector<std::vector<double>>& slots,
                                 std::vector<double>& avg) {
  std::fill(avg.begin(), avg.end(), 0.0);
  for (int r = 0; r < num_trainers; ++r) {
    if (asg.task(r, barrier).active) axpy(1.0, slots[static_cast<std::size_t>(r)], avg);
  }
  const double inv =
      1.0 / static_cast<double>(asg.active_trainers[static_cast<std::size_t>(barrier)]);
  for (double& x : avg) x *= inv;
}

// Per-trainer state machine: model replica, optimizer, and the stint cache.
// On a stint's first sub-iteration the trainer samples every sub's negatives,
// plans the supports, issues one read carrying all sub index lists, and after
// the step hands the daemon the root writes. Later sub-iterations reuse the
// cached views and only recompute the step under the newer weights.
class TrainerCore {
 public:
  TrainerCore(const TemporalGraph& g, const Assignment& asg, const TrainConfig& cfg,
              const ModelParams& initial, int rank)
      : g_(&g),
        asg_(&asg),
        cfg_(cfg),
        params_(initial),
        grads_(make_grads(initial.cfg)),
        adam_(param_count(initial)),
        rank_(rank) {}

  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  // Runs barrier step b. Fills slot with flattened gradients (zeros when this
  // trainer is idle) and loss_out with the slice loss. Returns activity.
  bool iterate(std::int64_t barrier, MemoryClient& client, std::span<double> slot,
               double& loss_out) {
    zero_grads(grads_);
    loss_out = 0;
    TrainerTask t = asg_->task(rank_, barrier);
    if (t.active) {
      if (t.sub == 0) prepare_stint(*t.stint, t.slice, client);
      s_hat_.clear();
      SubStepStats st =
          sub_step(*g_, params_, plans_[static_cast<std::size_t>(t.sub)],
                   views_[static_cast<std::size_t>(t.sub)], grads_, &s_hat_);
      loss_out = st.loss;
      if (t.sub == 0) {
        RootWrites w = build_root_writes(*g_, params_.cfg.d_mem, plans_[0], views_[0], s_hat_);
        client.write(w.nodes, w.mem, w.mail);
      }
    }
    flatten_grads(grads_, slot);
    return t.active;
  }

  void apply(std::span<const double> avg) { adam_.step(params_, avg, cfg_.lr_eff()); }

 private:
  void prepare_stint(const StintTask& stint, const LocalSlice& slice, MemoryClient& client) {
    const auto& batch = asg_->batches[static_cast<std::size_t>(stint.batch)];
    const EventId batch_len = batch.second - batch.first;
    plans_.clear();
    plans_.reserve(static_cast<std::size_t>(stint.subs));
    std::vector<std::vector<NodeId>> subs;
    subs.reserve(static_cast<std::size_t>(stint.subs));
    for (int s = 0; s < stint.subs; ++s) {
      // Negatives are drawn for the whole global batch so every team member
      // slices a consistent list.
      std::vector<NodeId> negs = sample_negatives(
          *g_, stint.batch, stint.neg_group[static_cast<std::size_t>(s)], batch_len, cfg_.seed);
      std::span<const NodeId> local(negs.data() + (slice.begin - batch.first),
                                    static_cast<std::size_t>(slice.end - slice.begin));
      plans_.push_back(
          plan_sub_batch(*g_, slice.begin, slice.end, local, params_.cfg.n_neighbors));
      subs.push_back(plans_.back().supports);
    }
    views_ = client.read(subs);
  }

  const TemporalGraph* g_;
  const Assignment* asg_;
  TrainConfig cfg_;
  ModelParams params_;
  ModelGrads grads_;
  Adam adam_;
  int rank_;
  std::vector<SubBatchPlan> plans_;
  std::vector<ReadView> views_;
  std::vector<std::vector<double>> s_hat_;
};

struct MetricsRow {
  std::int64_t iter = 0;       // completed global iterations
  std::int64_t traversed = 0;  // cumulative positive events traversed
  double loss = 0;             // mean training loss since the previous row
  double val_mrr = 0;
  double elapsed_s = 0;
};

struct RunOptions {
  ModelConfig model;
  TrainConfig train;
  EventId train_begin = 0;
  EventId train_end = 0;
  EventId val_begin = 0;  // empty range disables MRR evaluation
  EventId val_end = 0;
  int eval_negatives = 49;
  EventId eval_batch = 0;  // 0: use train.local_batch
  bool segment_snapshots = false;
  std::ostream* metrics_out = nullptr;
  std::vector<std::ostream*> oplog_out;  // one per memory copy, or empty
  // Called on the evaluating trainer's thread after each metrics row, with
  // the weights that produced it. Checkpoint-on-best lives here.
  std::function<void(const MetricsRow&, const ModelParams&)> on_eval;
};

struct RunResult {
  ModelParams params;                // final weights (all replicas identical)
  std::vector<double> barrier_loss;  // mean active-trainer loss per barrier
  std::vector<MetricsRow> metrics;
  std::vector<std::vector<MemorySnapshot>> snapshots;  // per memory copy
  std::int64_t barriers = 0;
  double elapsed_s = 0;
};

namespace detail {

inline ModelConfig resolve_model(const TemporalGraph& g, ModelConfig m) {
  if (m.num_nodes <= 0) m.num_nodes = g.num_nodes;
  if (m.num_nodes != g.num_nodes) {
    throw config_error("model num_nodes does not match the dataset");
  }
  if (m.d_e != g.d_e) {
    throw config_error("model edge feature width does not match the dataset");
  }
  return m;
}

inline void write_metrics_header(std::ostream* os) {
  if (os) *os << "iter,traversed,loss,val_mrr,elapsed_s\n" << std::flush;
}

inline void write_metrics_row(std::ostream* os, const MetricsRow& row) {
  if (!os) return;
  char buf[192];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g,%.17g,%.3f",
                static_cast<long long>(row.iter), static_cast<long long>(row.traversed),
                row.loss, row.val_mrr, row.elapsed_s);
  *os << buf << '\n' << std::flush;
}

}  // namespace detail

// Threaded run: one daemon per memory copy plus i*j*k trainer threads.
// Iterations are framed by two global barriers (gradients published, update
// applied); every replica applies the same averaged update, so weights stay
// bitwise identical without broadcasting.
inline RunResult run_training(const TemporalGraph& g, const RunOptions& opt) {
  TrainConfig cfg = opt.train;
  cfg.validate();
  const ModelConfig mcfg = detail::resolve_model(g, opt.model);
  Assignment asg = build_assignment(cfg, opt.train_begin, opt.train_end, opt.segment_snapshots);
  const int T = cfg.num_trainers();
  const int K = cfg.k;
  const int per_group = cfg.i * cfg.j;
  const EventId eval_batch = opt.eval_batch > 0 ? opt.eval_batch : cfg.local_batch;

  ModelParams initial = init_params(mcfg, cfg.seed);
  const std::size_t P = param_count(initial);

  if (!opt.oplog_out.empty() && opt.oplog_out.size() != static_cast<std::size_t>(K)) {
    throw config_error("run_training: need one op-log sink per memory copy");
  }

  RunResult res;
  res.barriers = asg.barriers;
  res.barrier_loss.assign(static_cast<std::size_t>(asg.barriers), 0.0);
  res.snapshots.resize(static_cast<std::size_t>(K));

  const std::int64_t read_cap =
      std::max<std::int64_t>(1, 3 * cfg.local_batch *
                                    (static_cast<std::int64_t>(mcfg.n_neighbors) + 1));
  const std::int64_t write_cap = std::max<std::int64_t>(1, 2 * cfg.local_batch);

  std::vector<std::unique_ptr<NodeMemoryState>> states;
  std::vector<std::unique_ptr<SharedBufferSet>> bufs;
  std::vector<std::unique_ptr<OpLogWriter>> logs(static_cast<std::size_t>(K));
  for (int r = 0; r < K; ++r) {
    states.push_back(
        std::make_unique<NodeMemoryState>(init_state(g.num_nodes, mcfg.d_mem)));
    bufs.push_back(std::make_unique<SharedBufferSet>(cfg.i, cfg.j, read_cap, write_cap,
                                                     mcfg.d_mem));
    if (!opt.oplog_out.empty() && opt.oplog_out[static_cast<std::size_t>(r)]) {
      logs[static_cast<std::size_t>(r)] =
          std::make_unique<OpLogWriter>(*opt.oplog_out[static_cast<std::size_t>(r)]);
    }
  }

  std::vector<std::vector<double>> slots(static_cast<std::size_t>(T),
                                         std::vector<double>(P, 0.0));
  std::vector<double> loss_slot(static_cast<std::size_t>(T), 0.0);
  SyncBarrier bar(T);
  std::atomic<bool> abort{false};
  std::mutex err_mu;
  std::exception_ptr first_err;
  auto fail = [&](std::exception_ptr ep) {
    {
      std::lock_guard<std::mutex> lk(err_mu);
      if (!first_err) first_err = ep;
    }
    abort.store(true, std::memory_order_seq_cst);
    bar.poke();
    for (auto& b : bufs) b->poke_abort();
  };

  detail::write_metrics_header(opt.metrics_out);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  ModelParams final_params;

  auto trainer_body = [&](int rank) {
    try {
      TrainerCore core(g, asg, cfg, initial, rank);
      BufferedMemoryClient client(*bufs[static_cast<std::size_t>(asg.group_of(rank))],
                                  rank % per_group, abort);
      std::vector<double> avg(P, 0.0);
      double acc_loss = 0;
      std::int64_t acc_n = 0;
      std::size_t eval_cursor = 0;
      for (std::int64_t b = 0; b < asg.barriers; ++b) {
        double loss = 0;
        core.iterate(b, client, slots[static_cast<std::size_t>(rank)], loss);
        loss_slot[static_cast<std::size_t>(rank)] = loss;
        if (!bar.arrive_and_wait(abort)) return;

        average_active_grads(asg, b, T, slots, avg);
        core.apply(avg);
        if (rank == 0) {
          double m = 0;
          for (int r2 = 0; r2 < T; ++r2) {
            if (asg.task(r2, b).active) m += loss_slot[static_cast<std::size_t>(r2)];
          }
          m /= static_cast<double>(asg.active_trainers[static_cast<std::size_t>(b)]);
          res.barrier_loss[static_cast<std::size_t>(b)] = m;
          acc_loss += m;
          ++acc_n;
        }
        if (!bar.arrive_and_wait(abort)) return;

        if (rank == 0 && eval_cursor < asg.eval_barriers.size() &&
            asg.eval_barriers[eval_cursor] == b) {
          ++eval_cursor;
          MetricsRow row;
          row.iter = b + 1;
          row.traversed = asg.traversed_after[static_cast<std::size_t>(b)];
          row.loss = acc_n > 0 ? acc_loss / static_cast<double>(acc_n) : 0.0;
          acc_loss = 0;
          acc_n = 0;
          if (opt.val_end > opt.val_begin) {
            row.val_mrr = evaluate_mrr(g, core.params(), opt.val_begin, opt.val_end, eval_batch,
                                       opt.eval_negatives, cfg.seed)
                              .mrr;
          }
          row.elapsed_s = elapsed();
          res.metrics.push_back(row);
          detail::write_metrics_row(opt.metrics_out, row);
          if (opt.on_eval) opt.on_eval(row, core.params());
        }
      }
      if (rank == 0) final_params = core.params();
    } catch (...) {
      fail(std::current_exception());
    }
  };

  auto daemon_body = [&](int r) {
    try {
      daemon_run(*states[static_cast<std::size_t>(r)], *bufs[static_cast<std::size_t>(r)],
                 asg.groups[static_cast<std::size_t>(r)].plan,
                 logs[static_cast<std::size_t>(r)].get(),
                 &res.snapshots[static_cast<std::size_t>(r)], abort);
    } catch (...) {
      fail(std::current_exception());
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(K + T));
  for (int r = 0; r < K; ++r) threads.emplace_back(daemon_body, r);
  for (int rank = 0; rank < T; ++rank) threads.emplace_back(trainer_body, rank);
  for (auto& th : threads) th.join();
  if (first_err) std::rethrow_exception(first_err);

  res.params = std::move(final_params);
  res.elapsed_s = elapsed();
  return res;
}

// Daemon-free reference: a single trainer against a directly owned memory
// state, replaying the same plan (including epoch resets and snapshot points)
// through the same step and update code as the threaded runner.
inline RunResult run_sequential(const TemporalGraph& g, const RunOptions& opt) {
  TrainConfig cfg = opt.train;
  cfg.validate();
  if (cfg.num_trainers() != 1) {
    throw config_error("run_sequential: requires i = j = k = 1");
  }
  const ModelConfig mcfg = detail::resolve_model(g, opt.model);
  Assignment asg = build_assignment(cfg, opt.train_begin, opt.train_end, opt.segment_snapshots);
  const EventId eval_batch = opt.eval_batch > 0 ? opt.eval_batch : cfg.local_batch;

  ModelParams initial = init_params(mcfg, cfg.seed);
  const std::size_t P = param_count(initial);

  RunResult res;
  res.barriers = asg.barriers;
  res.barrier_loss.assign(static_cast<std::size_t>(asg.barriers), 0.0);
  res.snapshots.resize(1);

  NodeMemoryState state = init_state(g.num_nodes, mcfg.d_mem);
  DirectMemoryClient client(state);
  TrainerCore core(g, asg, cfg, initial, 0);

  std::vector<std::vector<double>> slots(1, std::vector<double>(P, 0.0));
  std::vector<double> avg(P, 0.0);

  detail::write_metrics_header(opt.metrics_out);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const auto& ops = asg.groups[0].plan.ops;
  std::size_t cur = 0;
  double acc_loss = 0;
  std::int64_t acc_n = 0;
  std::size_t eval_cursor = 0;
  for (std::int64_t b = 0; b < asg.barriers; ++b) {
    while (cur < ops.size() && ops[cur].kind == DaemonOp::Kind::Reset) {
      reset_state(state);
      ++cur;
    }
    double loss = 0;
    core.iterate(b, client, slots[0], loss);
    // The plan pairs one read and one write per iteration here; snapshot
    // markers follow the write they refer to.
    for (int expect = 0; expect < 2; ++expect) {
      if (cur >= ops.size() || (ops[cur].kind != DaemonOp::Kind::Read &&
                                ops[cur].kind != DaemonOp::Kind::Write)) {
        throw protocol_error("run_sequential: daemon plan out of step with the schedule");
      }
      ++cur;
    }
    average_active_grads(asg, b, 1, slots, avg);
    core.apply(avg);
    res.barrier_loss[static_cast<std::size_t>(b)] = loss;
    acc_loss += loss;
    ++acc_n;
    while (cur < ops.size() && ops[cur].kind == DaemonOp::Kind::Snapshot) {
      MemorySnapshot snap;
      snap.sweep = static_cast<int>(ops[cur].epoch);
      snap.segment = ops[cur].segment;
      snap.memory = state.memory;
      snap.last_update = state.last_update;
      res.snapshots[0].push_back(std::move(snap));
      ++cur;
    }

    if (eval_cursor < asg.eval_barriers.size() && asg.eval_barriers[eval_cursor] == b) {
      ++eval_cursor;
      MetricsRow row;
      row.iter = b + 1;
      row.traversed = asg.traversed_after[static_cast<std::size_t>(b)];
      row.loss = acc_n > 0 ? acc_loss / static_cast<double>(acc_n) : 0.0;
      acc_loss = 0;
      acc_n = 0;
      if (opt.val_end > opt.val_begin) {
        row.val_mrr = evaluate_mrr(g, core.params(), opt.val_begin, opt.val_end, eval_batch,
                                   opt.eval_negatives, cfg.seed)
                          .mrr;
      }
      row.elapsed_s = elapsed();
      res.metrics.push_back(row);
      detail::write_metrics_row(opt.metrics_out, row);
      if (opt.on_eval) opt.on_eval(row, core.params());
    }
  }

  res.params = core.params();
  res.elapsed_s = elapsed();
  return res;
}

}  // namespace tgnn
