#pragma once

#include <atomic>
#include <cstdint>

namespace tgnn {

// Blocks until f == target using the futex-backed atomic wait. Returns false
// if the abort flag is raised; abort paths must poke the atomic afterwards so
// sleepers observe a value change.
inline bool wait_flag(std::atomic<int>& f, int target, const std::atomic<bool>& abort) {
  for (;;) {
    int v = f.load(std::memory_order_acquire);
    if (v == target) return true;
    if (abort.load(std::memory_order_relaxed)) return false;
    f.wait(v, std::memory_order_acquire);
  }
}

inline void set_flag(std::atomic<int>& f, int value) {
  f.store(value, std::memory_order_release);
  f.notify_all();
}

// Reusable barrier with an abort escape hatch. std::barrier has no way to
// release waiters on failure, which would deadlock the run on a trainer error.
class SyncBarrier {
 public:
  explicit SyncBarrier(int participants) : n_(participants) {}

  // Returns false when the run is aborting.
  bool arrive_and_wait(const std::atomic<bool>& abort) {
    const std::uint64_t ph = phase_.load(std::memory_order_acquire);
    if (arrived_.fetch_add(1, std::memory_order_acq_rel) + 1 == n_) {
      arrived_.store(0, std::memory_order_relaxed);
      phase_.fetch_add(1, std::memory_order_acq_rel);
      phase_.notify_all();
      return !abort.load(std::memory_order_relaxed);
    }
    for (;;) {
      const std::uint64_t now = phase_.load(std::memory_order_acquire);
      if (now != ph) return !abort.load(std::memory_order_relaxed);
      if (abort.load(std::memory_order_relaxed)) return false;
      phase_.wait(now, std::memory_order_acquire);
    }
  }

  // Abort path: fake a phase advance so sleepers wake and re-check the flag.
  void poke() {
    phase_.fetch_add(1, std::memory_order_acq_rel);
    phase_.notify_all();
  }

 private:
  const int n_;
  std::atomic<int> arrived_{0};
  std::atomic<std::uint64_t> phase_{0};
};

}  // namespace tgnn
