#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tgnn/memory_daemon.hpp"
#include "tgnn/rng.hpp"

namespace tgnn {

struct TrainConfig {
  int i = 1;  // mini-batch parallelism
  int j = 1;  // epoch parallelism
  int k = 1;  // memory parallelism
  int p = 1;  // emulated machine count
  int q = 1;  // trainers per machine
  std::int64_t local_batch = 600;
  double lr_base = 1e-3;
  int epochs = 1;
  std::uint64_t seed = 1;
  std::int64_t local_batch_ref = 0;  // 0: use local_batch (lr scales with trainer count)
  std::int64_t neg_groups = 0;       // 0: unlimited distinct negative groups

  int num_trainers() const { return i * j * k; }
  std::int64_t global_batch_events() const { return static_cast<std::int64_t>(i) * local_batch; }
  double lr_eff() const {
    const double ref = static_cast<double>(local_batch_ref > 0 ? local_batch_ref : local_batch);
    return lr_base * (static_cast<double>(num_trainers()) * static_cast<double>(local_batch)) /
           ref;
  }

  void validate() const {
    if (i < 1 || j < 1 || k < 1 || p < 1 || q < 1)
      throw config_error("config: i, j, k, p, q must all be >= 1");
    if (static_cast<std::int64_t>(i) * j * k != static_cast<std::int64_t>(p) * q)
      throw config_error("config: i*j*k must equal p*q (got " + std::to_string(i) + "*" +
                         std::to_string(j) + "*" + std::to_string(k) + " vs " +
                         std::to_string(p) + "*" + std::to_string(q) + ")");
    if (k < p)
      throw config_error("config: memory parallelism k must be >= machine count p");
    if (local_batch < 1) throw config_error("config: local_batch must be >= 1");
    if (epochs < 1) throw config_error("config: epochs must be >= 1");
    if (neg_groups != 0 && neg_groups < j)
      throw config_error("config: neg_groups must be 0 (unlimited) or >= j");
  }
};

struct PlanResult {
  int i = 1, j = 1, k = 1;
};

// Picks (i, j, k) for p machines with q trainers each: i from the batch-size
// ratio rounded up to a divisor of q, then as much memory parallelism as the
// per-machine copy budget allows, with epoch parallelism filling the rest.
inline PlanResult plan_config(int p, int q, std::int64_t max_safe_batch,
                              std::int64_t gpu_saturation_batch, int mem_copies_per_machine) {
  if (p < 1 || q < 1) throw config_error("plan: p and q must be >= 1");
  if (max_safe_batch < 1 || gpu_saturation_batch < 1 || mem_copies_per_machine < 1)
    throw config_error("plan: capacities must be positive");
  const std::int64_t need = (max_safe_batch + gpu_saturation_batch - 1) / gpu_saturation_batch;
  if (need > q)
    throw config_error("plan: needs mini-batch parallelism " + std::to_string(need) +
                       " but only " + std::to_string(q) + " trainers per machine");
  int i = q;
  for (int d = 1; d <= q; ++d) {
    if (q % d == 0 && d >= need) {
      i = d;
      break;
    }
  }
  const std::int64_t pq = static_cast<std::int64_t>(p) * q;
  const std::int64_t k =
      std::min<std::int64_t>(static_cast<std::int64_t>(p) * mem_copies_per_machine, pq / i);
  if (k < p)
    throw config_error("plan: cannot satisfy k >= p with i=" + std::to_string(i));
  if (pq % (i * k) != 0)
    throw config_error("plan: no integral epoch parallelism for i=" + std::to_string(i) +
                       ", k=" + std::to_string(k));
  return {i, static_cast<int>(pq / (i * k)), static_cast<int>(k)};
}

struct LocalSlice {
  EventId begin = 0;
  EventId end = 0;
};

// Chronological near-even split of one global batch into i local batches.
inline std::vector<LocalSlice> schedule_minibatch(EventId begin, EventId end, int i) {
  if (i < 1) throw config_error("schedule_minibatch: i must be >= 1");
  const EventId n = end - begin;
  std::vector<LocalSlice> out(static_cast<std::size_t>(i));
  EventId at = begin;
  for (int m = 0; m < i; ++m) {
    EventId len = n / i + (m < n % i ? 1 : 0);
    out[static_cast<std::size_t>(m)] = {at, at + len};
    at += len;
  }
  return out;
}

// Batch-index ranges of the k time segments; the last may be short.
inline std::vector<std::pair<std::int64_t, std::int64_t>> split_segments(std::int64_t nb,
                                                                         int k) {
  if (k < 1 || nb < 1) throw config_error("split_segments: invalid arguments");
  const std::int64_t len = (nb + k - 1) / k;
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (std::int64_t s = 0; s < nb; s += len) out.emplace_back(s, std::min(nb, s + len));
  while (static_cast<int>(out.size()) < k) out.emplace_back(nb, nb);  // degenerate tail
  return out;
}

// Distributes `total` iterations over `trainers` as evenly as possible.
inline std::vector<std::int64_t> traversal_budget(std::int64_t total, int trainers) {
  if (trainers < 1) throw config_error("traversal_budget: trainers must be >= 1");
  if (total < 0) throw config_error("traversal_budget: negative budget");
  std::vector<std::int64_t> out(static_cast<std::size_t>(trainers), total / trainers);
  for (int r = 0; r < static_cast<int>(total % trainers); ++r) ++out[static_cast<std::size_t>(r)];
  return out;
}

// One stint: a team holds one global batch for up to j consecutive
// iterations, one negative group per sub-iteration, reading memory once and
// writing once (after the first sub-iteration's forward pass).
struct StintTask {
  std::int64_t pair = 0;  // ordinal within the group's daemon plan
  int team = 0;           // pair % j
  std::int64_t batch = 0;
  int sweep = 0;
  int segment = 0;
  int subs = 0;
  std::vector<std::int64_t> neg_group;  // one id per sub-iteration, distinct
};

struct GroupSchedule {
  std::vector<StintTask> pairs;
  DaemonPlan plan;
};

struct TrainerTask {
  bool active = false;
  const StintTask* stint = nullptr;
  int sub = 0;
  LocalSlice slice;  // this member's event range
};

struct Assignment {
  int i = 1, j = 1, k = 1;
  std::int64_t nb = 0;
  EventId train_begin = 0, train_end = 0;
  std::int64_t global_batch = 0;
  std::int64_t barriers = 0;
  std::vector<GroupSchedule> groups;
  std::vector<std::pair<EventId, EventId>> batches;
  std::vector<std::int64_t> active_trainers;  // per barrier
  std::vector<std::int64_t> traversed_after;  // cumulative positives after barrier b
  std::vector<std::int64_t> eval_barriers;    // ascending, final barrier included

  int group_of(int rank) const { return rank / (i * j); }
  int team_of(int rank) const { return (rank % (i * j)) / i; }
  int member_of(int rank) const { return rank % i; }

  TrainerTask task(int rank, std::int64_t barrier) const {
    TrainerTask t;
    const int r = group_of(rank);
    const int team = team_of(rank);
    const std::int64_t pair = (barrier / j) * j + team;
    const auto& ps = groups[static_cast<std::size_t>(r)].pairs;
    if (pair >= static_cast<std::int64_t>(ps.size())) return t;
    const StintTask& st = ps[static_cast<std::size_t>(pair)];
    const int sub = static_cast<int>(barrier % j);
    if (sub >= st.subs) return t;
    t.active = true;
    t.stint = &st;
    t.sub = sub;
    const auto& b = batches[static_cast<std::size_t>(st.batch)];
    t.slice = schedule_minibatch(b.first, b.second, i)[static_cast<std::size_t>(member_of(rank))];
    return t;
  }
};

namespace detail {

inline std::vector<std::int64_t> pick_neg_groups(std::uint64_t seed, int group, std::int64_t pair,
                                                 int subs, int j, std::int64_t neg_groups) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(subs));
  if (neg_groups == 0) {
    for (int s = 0; s < subs; ++s) out[static_cast<std::size_t>(s)] = pair * j + s;
    return out;
  }
  // partial Fisher-Yates over [0, neg_groups) without materializing it
  Rng rng(hash64(seed, 0x6e656773ull, static_cast<std::uint64_t>(group),
                 static_cast<std::uint64_t>(pair)));
  std::map<std::int64_t, std::int64_t> swapped;
  auto at = [&](std::int64_t idx) {
    auto it = swapped.find(idx);
    return it == swapped.end() ? idx : it->second;
  };
  for (int s = 0; s < subs; ++s) {
    const std::int64_t pickat =
        static_cast<std::int64_t>(s) +
        static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(neg_groups - s)));
    out[static_cast<std::size_t>(s)] = at(pickat);
    swapped[pickat] = at(s);
  }
  return out;
}

}  // namespace detail

// Builds the full run schedule: per-group stint/batch lists, daemon plans
// (with per-sweep resets and optional segment snapshots), per-barrier active
// counts and traversal totals, and the evaluation points (one per
// epoch-equivalent of globally traversed positives).
inline Assignment build_assignment(const TrainConfig& cfg, EventId train_begin,
                                   EventId train_end, bool segment_snapshots = false) {
  cfg.validate();
  if (train_end <= train_begin) throw config_error("assignment: empty training range");
  Assignment a;
  a.i = cfg.i;
  a.j = cfg.j;
  a.k = cfg.k;
  a.train_begin = train_begin;
  a.train_end = train_end;
  a.global_batch = cfg.global_batch_events();
  const EventId total_events = train_end - train_begin;
  a.nb = (total_events + a.global_batch - 1) / a.global_batch;
  for (std::int64_t b = 0; b < a.nb; ++b) {
    const EventId lo = train_begin + b * a.global_batch;
    a.batches.emplace_back(lo, std::min<EventId>(train_end, lo + a.global_batch));
  }
  const auto segments = split_segments(a.nb, cfg.k);
  auto segment_of = [&](std::int64_t batch) {
    for (std::size_t s = 0; s < segments.size(); ++s)
      if (batch >= segments[s].first && batch < segments[s].second) return static_cast<int>(s);
    throw numeric_error("assignment: batch outside all segments");
  };

  // team-iteration budget: one team-iteration traverses one global batch
  const std::int64_t team_iters_total = static_cast<std::int64_t>(cfg.epochs) * a.nb;
  const auto per_group = traversal_budget(team_iters_total, cfg.k);

  a.groups.resize(static_cast<std::size_t>(cfg.k));
  for (int r = 0; r < cfg.k; ++r) {
    GroupSchedule& gs = a.groups[static_cast<std::size_t>(r)];
    const std::int64_t n_iters = per_group[static_cast<std::size_t>(r)];
    if (n_iters == 0) continue;
    const std::int64_t n_pairs = (n_iters + cfg.j - 1) / cfg.j;
    gs.pairs.reserve(static_cast<std::size_t>(n_pairs));
    std::int64_t produced = 0;
    for (int sweep = 0; produced < n_pairs; ++sweep) {
      const int seg_lo = sweep == 0 ? r : 0;
      for (int seg = seg_lo; seg < cfg.k && produced < n_pairs; ++seg) {
        for (std::int64_t b = segments[static_cast<std::size_t>(seg)].first;
             b < segments[static_cast<std::size_t>(seg)].second && produced < n_pairs; ++b) {
          StintTask st;
          st.pair = produced;
          st.team = static_cast<int>(produced % cfg.j);
          st.batch = b;
          st.sweep = sweep;
          st.segment = seg;
          st.subs = cfg.j;
          gs.pairs.push_back(std::move(st));
          ++produced;
        }
      }
    }
    gs.pairs.back().subs = static_cast<int>(n_iters - (n_pairs - 1) * cfg.j);
    for (auto& st : gs.pairs)
      st.neg_group =
          detail::pick_neg_groups(cfg.seed, r, st.pair, st.subs, cfg.j, cfg.neg_groups);

    // daemon plan: reset per sweep, R/W bracket per pair, snapshots at true
    // segment boundaries
    for (std::size_t p = 0; p < gs.pairs.size(); ++p) {
      const StintTask& st = gs.pairs[p];
      if (p == 0 || gs.pairs[p - 1].sweep != st.sweep)
        gs.plan.ops.push_back({DaemonOp::Kind::Reset, 0, st.sweep, st.pair, 0});
      for (int m = 0; m < cfg.i; ++m)
        gs.plan.ops.push_back(
            {DaemonOp::Kind::Read, st.team * cfg.i + m, st.sweep, st.pair, st.segment});
      for (int m = 0; m < cfg.i; ++m)
        gs.plan.ops.push_back(
            {DaemonOp::Kind::Write, st.team * cfg.i + m, st.sweep, st.pair, st.segment});
      if (segment_snapshots &&
          st.batch == segments[static_cast<std::size_t>(st.segment)].second - 1)
        gs.plan.ops.push_back({DaemonOp::Kind::Snapshot, 0, st.sweep, st.pair, st.segment});
    }
  }

  // per-barrier activity and traversal
  std::int64_t barriers = 0;
  for (const auto& gs : a.groups)
    for (const auto& st : gs.pairs)
      barriers = std::max(barriers, (st.pair / cfg.j) * cfg.j + st.subs);
  a.barriers = barriers;
  a.active_trainers.assign(static_cast<std::size_t>(barriers), 0);
  a.traversed_after.assign(static_cast<std::size_t>(barriers), 0);
  for (const auto& gs : a.groups) {
    for (const auto& st : gs.pairs) {
      const std::int64_t base = (st.pair / cfg.j) * cfg.j;
      const auto& b = a.batches[static_cast<std::size_t>(st.batch)];
      for (int s = 0; s < st.subs; ++s) {
        a.active_trainers[static_cast<std::size_t>(base + s)] += cfg.i;
        a.traversed_after[static_cast<std::size_t>(base + s)] += b.second - b.first;
      }
    }
  }
  for (std::int64_t b = 1; b < barriers; ++b)
    a.traversed_after[static_cast<std::size_t>(b)] +=
        a.traversed_after[static_cast<std::size_t>(b - 1)];

  // evaluation after every epoch-equivalent of traversed positives
  const std::int64_t total_traversed = barriers > 0
                                           ? a.traversed_after[static_cast<std::size_t>(barriers - 1)]
                                           : 0;
  std::int64_t next_mark = total_events;
  for (std::int64_t b = 0; b < barriers; ++b) {
    if (a.traversed_after[static_cast<std::size_t>(b)] >= next_mark) {
      a.eval_barriers.push_back(b);
      while (next_mark <= a.traversed_after[static_cast<std::size_t>(b)]) next_mark += total_events;
    }
  }
  if (barriers > 0 && (a.eval_barriers.empty() || a.eval_barriers.back() != barriers - 1))
    a.eval_barriers.push_back(barriers - 1);
  (void)total_traversed;
  return a;
}

inline std::string dump_assignment(const Assignment& a) {
  std::ostringstream os;
  os << "trainer,iter,epoch,segment,batch,neg_group,role\n";
  const int T = a.i * a.j * a.k;
  for (int rank = 0; rank < T; ++rank) {
    for (std::int64_t b = 0; b < a.barriers; ++b) {
      TrainerTask t = a.task(rank, b);
      if (!t.active) continue;
      os << rank << ',' << b << ',' << t.stint->sweep << ',' << t.stint->segment << ','
         << t.stint->batch << ',' << t.stint->neg_group[static_cast<std::size_t>(t.sub)] << ','
         << (t.sub == 0 ? "writer" : "reader") << '\n';
    }
  }
  return os.str();
}

}  // namespace tgnn
