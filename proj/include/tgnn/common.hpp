#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace tgnn {

using NodeId = std::int64_t;
using EventId = std::int64_t;
using TimeT = double;

// Validation failures (bad config, malformed input). CLI maps these to exit code 2.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed data file; message carries the 1-based line number.
struct parse_error : config_error {
  explicit parse_error(const std::string& msg) : config_error(msg) {}
};

// Non-finite value escaped a compute kernel.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shared-buffer handshake misuse (e.g. a request issued while the previous
// one of the same kind is still pending).
struct protocol_error : std::runtime_error {
  explicit protocol_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void check_finite(std::span<const double> xs, const char* where) {
  for (double x : xs) {
    if (!std::isfinite(x)) {
      throw numeric_error(std::string("non-finite value in ") + where);
    }
  }
}

inline void check_finite(double x, const char* where) {
  if (!std::isfinite(x)) {
    throw numeric_error(std::string("non-finite value in ") + where);
  }
}

}  // namespace tgnn
