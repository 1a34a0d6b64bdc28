#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "tgnn/oplog.hpp"
#include "tgnn/shared_buffers.hpp"

namespace tgnn {

struct MemorySnapshot {
  int sweep = 0;
  int segment = 0;
  Tensor memory;
  std::vector<TimeT> last_update;
};

// A daemon executes a precomputed op list: epoch resets, read/write brackets
// (one op per rank, grouped by the planner into full windows), and optional
// state snapshots for oracle tests.
struct DaemonOp {
  enum class Kind { Reset, Read, Write, Snapshot };
  Kind kind = Kind::Reset;
  int rank = 0;
  std::int64_t epoch = 0;  // sweep ordinal, for the op-log
  std::int64_t iter = 0;   // pair ordinal, never resets
  int segment = 0;         // snapshots only
};

struct DaemonPlan {
  std::vector<DaemonOp> ops;
};

// Runs the plan to completion. Returns false if the run aborted mid-plan.
// Requests within one bracket are served in ascending rank (the planner emits
// them that way), which also resolves intra-bracket write collisions:
// later-applied higher ranks win.
inline bool daemon_run(NodeMemoryState& state, SharedBufferSet& bufs, const DaemonPlan& plan,
                       OpLogWriter* log, std::vector<MemorySnapshot>* snaps,
                       const std::atomic<bool>& abort) {
  const std::size_t d_mem = state.d_mem;
  for (const DaemonOp& op : plan.ops) {
    switch (op.kind) {
      case DaemonOp::Kind::Reset:
        reset_state(state);
        break;
      case DaemonOp::Kind::Read: {
        if (!wait_flag(bufs.read_status(op.rank), 1, abort)) return false;
        std::int64_t total = 0;
        std::int64_t first = 0;
        bool have_first = false;
        for (int sub = 0; sub < bufs.j(); ++sub) {
          auto idx = bufs.read_idx(op.rank, sub);
          const std::int64_t len = idx[0];
          if (len < 0 || len > bufs.read_cap())
            throw protocol_error("daemon: read length out of range");
          for (std::int64_t r = 0; r < len; ++r) {
            const std::int64_t v = idx[1 + r];
            if (v < 0 || v >= state.num_nodes)
              throw protocol_error("daemon: read index out of range");
            if (!have_first) {
              first = v;
              have_first = true;
            }
            auto src = state.memory.row(static_cast<std::size_t>(v));
            auto dst = bufs.read_mem_row(op.rank, sub, r);
            std::copy(src.begin(), src.end(), dst.begin());
            pack_mail_row(state, v, bufs.read_mail_row(op.rank, sub, r));
          }
          total += len;
        }
        if (log) log->append({op.epoch, op.iter, 'R', op.rank, first, total});
        set_flag(bufs.read_status(op.rank), 0);
        break;
      }
      case DaemonOp::Kind::Write: {
        if (!wait_flag(bufs.write_status(op.rank), 1, abort)) return false;
        auto idx = bufs.write_idx(op.rank);
        const std::int64_t len = idx[0];
        if (len < 0 || len > bufs.write_cap())
          throw protocol_error("daemon: write length out of range");
        for (std::int64_t r = 0; r < len; ++r) {
          const std::int64_t v = idx[1 + r];
          if (v < 0 || v >= state.num_nodes)
            throw protocol_error("daemon: write index out of range");
          apply_root_write(state, v, bufs.write_mem_row(op.rank, r),
                           unpack_mail_row(bufs.write_mail_row(op.rank, r), d_mem));
        }
        if (log) log->append({op.epoch, op.iter, 'W', op.rank, len > 0 ? idx[1] : 0, len});
        set_flag(bufs.write_status(op.rank), 0);
        break;
      }
      case DaemonOp::Kind::Snapshot: {
        if (snaps) {
          MemorySnapshot s;
          s.sweep = static_cast<int>(op.epoch);
          s.segment = op.segment;
          s.memory = state.memory;
          s.last_update = state.last_update;
          snaps->push_back(std::move(s));
        }
        break;
      }
    }
  }
  if (log) log->flush();
  return true;
}

}  // namespace tgnn
