#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tgnn/memory_store.hpp"
#include "tgnn/sync.hpp"

namespace tgnn {

// The daemon/trainer exchange area: per-rank read buffers (j sub-slices of
// memory rows, mail rows, and an index list each), per-rank write buffers,
// and one status flag per rank per direction. Index slot 0 holds the length.
// Trainers raise a flag to 1 to publish a request; the daemon consumes it and
// drops the flag back to 0.
class SharedBufferSet {
 public:
  SharedBufferSet(int i, int j, std::int64_t read_cap, std::int64_t write_cap,
                  std::size_t d_mem)
      : i_(i),
        j_(j),
        read_cap_(read_cap),
        write_cap_(write_cap),
        d_mem_(d_mem),
        mail_w_(mail_row_width(d_mem)) {
    if (i < 1 || j < 1 || read_cap < 1 || write_cap < 1 || d_mem < 1)
      throw config_error("shared buffers: invalid shape");
    const std::size_t nr = static_cast<std::size_t>(i) * static_cast<std::size_t>(j);
    const std::size_t rc = static_cast<std::size_t>(read_cap);
    const std::size_t wc = static_cast<std::size_t>(write_cap);
    read_mem_.assign(nr * static_cast<std::size_t>(j) * rc * d_mem_, 0.0);
    read_mail_.assign(nr * static_cast<std::size_t>(j) * rc * mail_w_, 0.0);
    read_idx_.assign(nr * static_cast<std::size_t>(j) * (rc + 1), 0);
    write_mem_.assign(nr * wc * d_mem_, 0.0);
    write_mail_.assign(nr * wc * mail_w_, 0.0);
    write_idx_.assign(nr * (wc + 1), 0);
    read_status_ = std::make_unique<std::atomic<int>[]>(nr);
    write_status_ = std::make_unique<std::atomic<int>[]>(nr);
    for (std::size_t r = 0; r < nr; ++r) {
      read_status_[r].store(0, std::memory_order_relaxed);
      write_status_[r].store(0, std::memory_order_relaxed);
    }
  }

  int i() const { return i_; }
  int j() const { return j_; }
  std::int64_t read_cap() const { return read_cap_; }
  std::int64_t write_cap() const { return write_cap_; }
  std::size_t d_mem() const { return d_mem_; }
  std::size_t mail_width() const { return mail_w_; }
  int num_ranks() const { return i_ * j_; }

  std::span<std::int64_t> read_idx(int rank, int sub) {
    const std::size_t rc = static_cast<std::size_t>(read_cap_);
    return {read_idx_.data() + (slot(rank, sub)) * (rc + 1), rc + 1};
  }
  std::span<double> read_mem_row(int rank, int sub, std::int64_t row) {
    const std::size_t rc = static_cast<std::size_t>(read_cap_);
    return {read_mem_.data() + (slot(rank, sub) * rc + static_cast<std::size_t>(row)) * d_mem_,
            d_mem_};
  }
  std::span<double> read_mail_row(int rank, int sub, std::int64_t row) {
    const std::size_t rc = static_cast<std::size_t>(read_cap_);
    return {read_mail_.data() + (slot(rank, sub) * rc + static_cast<std::size_t>(row)) * mail_w_,
            mail_w_};
  }
  std::span<std::int64_t> write_idx(int rank) {
    const std::size_t wc = static_cast<std::size_t>(write_cap_);
    return {write_idx_.data() + static_cast<std::size_t>(rank) * (wc + 1), wc + 1};
  }
  std::span<double> write_mem_row(int rank, std::int64_t row) {
    const std::size_t wc = static_cast<std::size_t>(write_cap_);
    return {write_mem_.data() +
                (static_cast<std::size_t>(rank) * wc + static_cast<std::size_t>(row)) * d_mem_,
            d_mem_};
  }
  std::span<double> write_mail_row(int rank, std::int64_t row) {
    const std::size_t wc = static_cast<std::size_t>(write_cap_);
    return {write_mail_.data() +
                (static_cast<std::size_t>(rank) * wc + static_cast<std::size_t>(row)) * mail_w_,
            mail_w_};
  }

  std::atomic<int>& read_status(int rank) { return read_status_[static_cast<std::size_t>(rank)]; }
  std::atomic<int>& write_status(int rank) {
    return write_status_[static_cast<std::size_t>(rank)];
  }

  // Abort path: force every status to a sentinel so any sleeper wakes.
  void poke_abort() {
    for (int r = 0; r < num_ranks(); ++r) {
      read_status_[static_cast<std::size_t>(r)].store(-1, std::memory_order_release);
      read_status_[static_cast<std::size_t>(r)].notify_all();
      write_status_[static_cast<std::size_t>(r)].store(-1, std::memory_order_release);
      write_status_[static_cast<std::size_t>(r)].notify_all();
    }
  }

 private:
  std::size_t slot(int rank, int sub) const {
    return static_cast<std::size_t>(rank) * static_cast<std::size_t>(j_) +
           static_cast<std::size_t>(sub);
  }

  int i_, j_;
  std::int64_t read_cap_, write_cap_;
  std::size_t d_mem_, mail_w_;
  std::vector<double> read_mem_, read_mail_, write_mem_, write_mail_;
  std::vector<std::int64_t> read_idx_, write_idx_;
  std::unique_ptr<std::atomic<int>[]> read_status_, write_status_;
};

// One sub-slice of a completed read: node ids in request order plus their
// memory and packed mail rows.
struct ReadView {
  std::vector<NodeId> nodes;
  Tensor mem;   // [n, d_mem]
  Tensor mail;  // [n, mail_row_width]
};

class MemoryClient {
 public:
  virtual ~MemoryClient() = default;
  virtual std::vector<ReadView> read(const std::vector<std::vector<NodeId>>& subs) = 0;
  virtual void write(const std::vector<NodeId>& nodes, const Tensor& mem_rows,
                     const Tensor& mail_rows) = 0;
};

// Serves straight from a locally owned state; the reference path for
// sequential runs and oracles.
class DirectMemoryClient final : public MemoryClient {
 public:
  explicit DirectMemoryClient(NodeMemoryState& s) : s_(&s) {}

  std::vector<ReadView> read(const std::vector<std::vector<NodeId>>& subs) override {
    std::vector<ReadView> out(subs.size());
    for (std::size_t k = 0; k < subs.size(); ++k) {
      ReadView& v = out[k];
      v.nodes = subs[k];
      v.mem = Tensor({v.nodes.size(), s_->d_mem});
      v.mail = Tensor({v.nodes.size(), mail_row_width(s_->d_mem)});
      for (std::size_t r = 0; r < v.nodes.size(); ++r) {
        auto src = s_->memory.row(static_cast<std::size_t>(v.nodes[r]));
        auto dst = v.mem.row(r);
        std::copy(src.begin(), src.end(), dst.begin());
        pack_mail_row(*s_, v.nodes[r], v.mail.row(r));
      }
    }
    return out;
  }

  void write(const std::vector<NodeId>& nodes, const Tensor& mem_rows,
             const Tensor& mail_rows) override {
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      apply_root_write(*s_, nodes[r], mem_rows.row(r),
                       unpack_mail_row(mail_rows.row(r), s_->d_mem));
    }
  }

 private:
  NodeMemoryState* s_;
};

// Client half of the daemon protocol; never touches node memory directly.
class BufferedMemoryClient final : public MemoryClient {
 public:
  BufferedMemoryClient(SharedBufferSet& b, int rank, const std::atomic<bool>& abort)
      : b_(&b), rank_(rank), abort_(&abort) {}

  std::vector<ReadView> read(const std::vector<std::vector<NodeId>>& subs) override {
    if (subs.size() > static_cast<std::size_t>(b_->j()))
      throw protocol_error("read: too many sub-slices");
    if (!wait_flag(b_->read_status(rank_), 0, *abort_))
      throw protocol_error("read: run aborted");
    for (int sub = 0; sub < b_->j(); ++sub) {
      auto idx = b_->read_idx(rank_, sub);
      if (sub < static_cast<int>(subs.size())) {
        const auto& nodes = subs[static_cast<std::size_t>(sub)];
        if (static_cast<std::int64_t>(nodes.size()) > b_->read_cap())
          throw protocol_error("read: sub-slice exceeds buffer capacity");
        idx[0] = static_cast<std::int64_t>(nodes.size());
        for (std::size_t r = 0; r < nodes.size(); ++r) idx[1 + r] = nodes[r];
      } else {
        idx[0] = 0;
      }
    }
    set_flag(b_->read_status(rank_), 1);
    if (!wait_flag(b_->read_status(rank_), 0, *abort_))
      throw protocol_error("read: run aborted");
    std::vector<ReadView> out(subs.size());
    for (std::size_t sub = 0; sub < subs.size(); ++sub) {
      ReadView& v = out[sub];
      v.nodes = subs[sub];
      v.mem = Tensor({v.nodes.size(), b_->d_mem()});
      v.mail = Tensor({v.nodes.size(), b_->mail_width()});
      for (std::size_t r = 0; r < v.nodes.size(); ++r) {
        auto ms = b_->read_mem_row(rank_, static_cast<int>(sub), static_cast<std::int64_t>(r));
        std::copy(ms.begin(), ms.end(), v.mem.row(r).begin());
        auto ls = b_->read_mail_row(rank_, static_cast<int>(sub), static_cast<std::int64_t>(r));
        std::copy(ls.begin(), ls.end(), v.mail.row(r).begin());
      }
    }
    return out;
  }

  void write(const std::vector<NodeId>& nodes, const Tensor& mem_rows,
             const Tensor& mail_rows) override {
    if (static_cast<std::int64_t>(nodes.size()) > b_->write_cap())
      throw protocol_error("write: exceeds buffer capacity");
    // previous write must have been consumed before the buffers are reused
    if (!wait_flag(b_->write_status(rank_), 0, *abort_))
      throw protocol_error("write: run aborted");
    auto idx = b_->write_idx(rank_);
    idx[0] = static_cast<std::int64_t>(nodes.size());
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      idx[1 + r] = nodes[r];
      auto mem = mem_rows.row(r);
      auto mail = mail_rows.row(r);
      auto bm = b_->write_mem_row(rank_, static_cast<std::int64_t>(r));
      auto bl = b_->write_mail_row(rank_, static_cast<std::int64_t>(r));
      std::copy(mem.begin(), mem.end(), bm.begin());
      std::copy(mail.begin(), mail.end(), bl.begin());
    }
    set_flag(b_->write_status(rank_), 1);
  }

 private:
  SharedBufferSet* b_;
  int rank_;
  const std::atomic<bool>* abort_;
};

}  // namespace tgnn
