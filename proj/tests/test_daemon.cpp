#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <sstream>
#include <thread>
#include <vector>

#include "tgnn/memory_daemon.hpp"
#include "tgnn/oplog.hpp"
#include "tgnn/shared_buffers.hpp"
#include "tgnn/sync.hpp"

using namespace tgnn;

namespace {

DaemonOp op(DaemonOp::Kind k, int rank, std::int64_t epoch, std::int64_t iter) {
  DaemonOp o;
  o.kind = k;
  o.rank = rank;
  o.epoch = epoch;
  o.iter = iter;
  return o;
}

void fill_mail_row(std::span<double> row, std::size_t d_mem, double t, double dt,
                   EventId event) {
  for (std::size_t c = 0; c < 2 * d_mem; ++c) row[c] = 0.25 * static_cast<double>(c);
  row[2 * d_mem] = t;
  row[2 * d_mem + 1] = dt;
  row[2 * d_mem + 2] = static_cast<double>(event);
}

OpRecord rec(std::int64_t epoch, std::int64_t iter, char kind, int rank) {
  OpRecord r;
  r.epoch = epoch;
  r.iter = iter;
  r.kind = kind;
  r.rank = rank;
  return r;
}

}  // namespace

TEST_CASE("buffered client round-trips reads and writes through the daemon", "[daemon]") {
  NodeMemoryState state = init_state(5, 2);
  for (NodeId v = 0; v < 5; ++v) {
    state.memory.row(static_cast<std::size_t>(v))[0] = static_cast<double>(v);
    state.memory.row(static_cast<std::size_t>(v))[1] = 10.0 + static_cast<double>(v);
  }
  state.mail_event[3] = 9;
  state.mail_t[3] = 2.0;
  state.mail_dt[3] = 0.5;
  state.mail_mem.row(3)[0] = 7.0;
  state.last_update[3] = 2.0;

  SharedBufferSet bufs(1, 2, 8, 8, 2);
  DaemonPlan plan;
  plan.ops.push_back(op(DaemonOp::Kind::Read, 0, 0, 0));
  plan.ops.push_back(op(DaemonOp::Kind::Write, 0, 0, 0));

  std::atomic<bool> abort{false};
  std::ostringstream log_os;
  OpLogWriter log(log_os);
  bool daemon_ok = false;
  std::thread daemon([&] { daemon_ok = daemon_run(state, bufs, plan, &log, nullptr, abort); });

  BufferedMemoryClient client(bufs, 0, abort);
  auto views = client.read({{3, 0}, {4}});
  REQUIRE(views.size() == 2);
  REQUIRE(views[0].nodes == std::vector<NodeId>{3, 0});
  REQUIRE(views[0].mem.row(0)[0] == 3.0);
  REQUIRE(views[0].mem.row(1)[1] == 10.0);
  MailRowView mv = unpack_mail_row(views[0].mail.row(0), 2);
  REQUIRE(mv.event == 9);
  REQUIRE(mv.t == 2.0);
  REQUIRE(mv.mem2[0] == 7.0);
  REQUIRE(unpack_mail_row(views[0].mail.row(1), 2).event == -1);
  REQUIRE(views[1].mem.row(0)[0] == 4.0);

  Tensor wmem({1, 2});
  wmem.row(0)[0] = -5.0;
  wmem.row(0)[1] = -6.0;
  Tensor wmail({1, mail_row_width(2)});
  fill_mail_row(wmail.row(0), 2, 6.0, 6.0, 11);
  client.write({2}, wmem, wmail);
  daemon.join();
  REQUIRE(daemon_ok);

  REQUIRE(state.memory.row(2)[0] == -5.0);
  REQUIRE(state.mail_event[2] == 11);
  REQUIRE(state.last_update[2] == 6.0);

  std::istringstream is(log_os.str());
  auto recs = parse_oplog(is);
  REQUIRE(recs.size() == 2);
  REQUIRE(recs[0].kind == 'R');
  REQUIRE(recs[0].len == 3);  // summed over both sub-slices
  REQUIRE(recs[0].first_idx == 3);
  REQUIRE(recs[1].kind == 'W');
  REQUIRE(recs[1].len == 1);
  REQUIRE(recs[1].first_idx == 2);
  REQUIRE(validate_oplog(recs, 1, 2).ok);
}

TEST_CASE("direct client matches the buffer protocol semantics", "[daemon]") {
  NodeMemoryState state = init_state(3, 1);
  state.memory.row(1)[0] = 4.0;
  DirectMemoryClient client(state);

  auto views = client.read({{1, 2}});
  REQUIRE(views.size() == 1);
  REQUIRE(views[0].mem.row(0)[0] == 4.0);
  REQUIRE(unpack_mail_row(views[0].mail.row(1), 1).event == -1);

  Tensor wmem({1, 1});
  wmem.row(0)[0] = 2.5;
  Tensor wmail({1, mail_row_width(1)});
  fill_mail_row(wmail.row(0), 1, 3.0, 1.0, 8);
  client.write({2}, wmem, wmail);
  REQUIRE(state.memory.row(2)[0] == 2.5);
  REQUIRE(state.mail_event[2] == 8);
  REQUIRE(state.last_update[2] == 3.0);
}

TEST_CASE("later-ranked writes win intra-bracket collisions", "[daemon]") {
  NodeMemoryState state = init_state(4, 1);
  SharedBufferSet bufs(2, 1, 4, 4, 1);

  // Both ranks target node 3 in the same write bracket; the daemon applies
  // ascending rank, so rank 1 lands last.
  for (int rank = 0; rank < 2; ++rank) {
    auto idx = bufs.write_idx(rank);
    idx[0] = 1;
    idx[1] = 3;
    bufs.write_mem_row(rank, 0)[0] = 1.0 + rank;
    fill_mail_row(bufs.write_mail_row(rank, 0), 1, 1.0, 1.0, 5 + rank);
    set_flag(bufs.write_status(rank), 1);
  }

  DaemonPlan plan;
  plan.ops.push_back(op(DaemonOp::Kind::Write, 0, 0, 0));
  plan.ops.push_back(op(DaemonOp::Kind::Write, 1, 0, 0));
  std::atomic<bool> abort{false};
  REQUIRE(daemon_run(state, bufs, plan, nullptr, nullptr, abort));
  REQUIRE(state.memory.row(3)[0] == 2.0);
  REQUIRE(state.mail_event[3] == 6);
}

TEST_CASE("a full two-pair schedule emits the pinned bracket grammar", "[daemon]") {
  NodeMemoryState state = init_state(10, 1);
  SharedBufferSet bufs(2, 2, 4, 4, 1);  // four ranks, windows of two

  // Pre-raise every request so the single-threaded daemon never blocks.
  for (int rank = 0; rank < 4; ++rank) {
    auto idx0 = bufs.read_idx(rank, 0);
    idx0[0] = 1;
    idx0[1] = rank;
    bufs.read_idx(rank, 1)[0] = 0;
    set_flag(bufs.read_status(rank), 1);

    auto widx = bufs.write_idx(rank);
    widx[0] = 1;
    widx[1] = rank;
    bufs.write_mem_row(rank, 0)[0] = static_cast<double>(rank);
    fill_mail_row(bufs.write_mail_row(rank, 0), 1, 1.0, 1.0, rank);
    set_flag(bufs.write_status(rank), 1);
  }

  DaemonPlan plan;
  plan.ops.push_back(op(DaemonOp::Kind::Read, 0, 0, 0));
  plan.ops.push_back(op(DaemonOp::Kind::Read, 1, 0, 0));
  plan.ops.push_back(op(DaemonOp::Kind::Write, 0, 0, 0));
  plan.ops.push_back(op(DaemonOp::Kind::Write, 1, 0, 0));
  plan.ops.push_back(op(DaemonOp::Kind::Read, 2, 0, 1));
  plan.ops.push_back(op(DaemonOp::Kind::Read, 3, 0, 1));
  plan.ops.push_back(op(DaemonOp::Kind::Write, 2, 0, 1));
  plan.ops.push_back(op(DaemonOp::Kind::Write, 3, 0, 1));

  std::atomic<bool> abort{false};
  std::ostringstream log_os;
  OpLogWriter log(log_os);
  REQUIRE(daemon_run(state, bufs, plan, &log, nullptr, abort));

  std::istringstream is(log_os.str());
  auto recs = parse_oplog(is);
  REQUIRE(recs.size() == 8);
  REQUIRE(validate_oplog(recs, 2, 2).ok);

  std::string seq;
  for (std::size_t r = 0; r < recs.size(); ++r) {
    if (r % 2 == 0) seq += '(';
    seq += recs[r].kind;
    seq += std::to_string(recs[r].rank);
    if (r % 2 == 1) seq += ')';
  }
  REQUIRE(seq == "(R0R1)(W0W1)(R2R3)(W2W3)");
}

TEST_CASE("op-log validator rejects malformed sequences", "[daemon]") {
  const std::vector<OpRecord> good = {rec(0, 0, 'R', 0), rec(0, 0, 'R', 1),
                                      rec(0, 0, 'W', 0), rec(0, 0, 'W', 1),
                                      rec(0, 1, 'R', 2), rec(0, 1, 'R', 3),
                                      rec(0, 1, 'W', 2), rec(0, 1, 'W', 3)};
  REQUIRE(validate_oplog(good, 2, 2).ok);
  REQUIRE(validate_oplog({}, 2, 2).ok);

  SECTION("write arrives before its read bracket completes") {
    auto bad = good;
    std::swap(bad[1], bad[2]);
    auto v = validate_oplog(bad, 2, 2);
    REQUIRE_FALSE(v.ok);
    REQUIRE(v.line == 2);
  }
  SECTION("duplicate rank within a bracket") {
    auto bad = good;
    bad[1].rank = 0;
    auto v = validate_oplog(bad, 2, 2);
    REQUIRE_FALSE(v.ok);
    REQUIRE(v.line == 2);
  }
  SECTION("rank outside the pair's window") {
    auto bad = good;
    bad[4].rank = 0;  // pair 1 serves ranks {2, 3}
    auto v = validate_oplog(bad, 2, 2);
    REQUIRE_FALSE(v.ok);
    REQUIRE(v.line == 5);
  }
  SECTION("pair ordinals must start at zero") {
    auto bad = good;
    for (auto& r : bad) r.iter += 1;
    auto v = validate_oplog(bad, 2, 2);
    REQUIRE_FALSE(v.ok);
    REQUIRE(v.line == 1);
  }
  SECTION("log may not end inside a pair") {
    std::vector<OpRecord> trunc(good.begin(), good.end() - 1);
    REQUIRE_FALSE(validate_oplog(trunc, 2, 2).ok);
    std::vector<OpRecord> ronly(good.begin(), good.begin() + 2);
    REQUIRE_FALSE(validate_oplog(ronly, 2, 2).ok);
  }
  SECTION("epoch may advance only at a pair boundary") {
    auto bumped = good;
    for (std::size_t r = 4; r < bumped.size(); ++r) bumped[r].epoch = 1;
    REQUIRE(validate_oplog(bumped, 2, 2).ok);

    auto bad = bumped;
    bad[5].epoch = 2;
    auto v = validate_oplog(bad, 2, 2);
    REQUIRE_FALSE(v.ok);
    REQUIRE(v.line == 6);

    auto dec = good;
    for (std::size_t r = 4; r < dec.size(); ++r) dec[r].epoch = -1;
    v = validate_oplog(dec, 2, 2);
    REQUIRE_FALSE(v.ok);
    REQUIRE(v.line == 5);
  }
  SECTION("rank range and lengths") {
    auto bad = good;
    bad[0].rank = 7;
    REQUIRE_FALSE(validate_oplog(bad, 2, 2).ok);
    bad = good;
    bad[0].len = -1;
    REQUIRE_FALSE(validate_oplog(bad, 2, 2).ok);
  }
}

TEST_CASE("abort wakes sleeping waiters", "[daemon]") {
  std::atomic<bool> abort{true};
  std::atomic<int> flag{0};
  REQUIRE_FALSE(wait_flag(flag, 1, abort));

  // A daemon blocked on a request that never arrives unblocks on abort.
  abort.store(false);
  NodeMemoryState state = init_state(2, 1);
  SharedBufferSet bufs(1, 1, 2, 2, 1);
  DaemonPlan plan;
  plan.ops.push_back(op(DaemonOp::Kind::Read, 0, 0, 0));
  bool daemon_ok = true;
  std::thread d([&] { daemon_ok = daemon_run(state, bufs, plan, nullptr, nullptr, abort); });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  abort.store(true);
  bufs.poke_abort();
  d.join();
  REQUIRE_FALSE(daemon_ok);

  // Client calls on an aborted run throw instead of hanging.
  BufferedMemoryClient client(bufs, 0, abort);
  REQUIRE_THROWS_AS(client.read({{0}}), protocol_error);

  SyncBarrier barrier(2);
  std::atomic<bool> barrier_abort{false};
  bool released = true;
  std::thread t([&] { released = barrier.arrive_and_wait(barrier_abort); });
  barrier_abort.store(true);
  barrier.poke();
  t.join();
  REQUIRE_FALSE(released);
}
