#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "tgnn/common.hpp"

namespace tgnn {

// One serialized memory operation. Lines of one bracket share (epoch, iter);
// iter is the read/write pair ordinal and never resets across epochs.
struct OpRecord {
  std::int64_t epoch = 0;
  std::int64_t iter = 0;
  char kind = 'R';  // 'R' or 'W'
  int rank = 0;
  std::int64_t first_idx = 0;
  std::int64_t len = 0;
};

class OpLogWriter {
 public:
  OpLogWriter() = default;
  explicit OpLogWriter(std::ostream& os) : os_(&os) {}

  void append(const OpRecord& r) {
    if (!os_) return;
    (*os_) << r.epoch << ',' << r.iter << ',' << r.kind << ',' << r.rank << ','
           << r.first_idx << ',' << r.len << '\n';
  }
  void flush() {
    if (os_) os_->flush();
  }

 private:
  std::ostream* os_ = nullptr;  // daemon-owned, single writer, no locking
};

namespace detail {
inline std::int64_t parse_i64_field(std::string_view s, std::size_t line_no) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw parse_error("op-log line " + std::to_string(line_no) + ": bad integer '" +
                      std::string(s) + "'");
  return v;
}
}  // namespace detail

inline std::vector<OpRecord> parse_oplog(std::istream& is) {
  std::vector<OpRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string_view sv(line);
    std::vector<std::string_view> f;
    std::size_t start = 0;
    for (std::size_t c = 0; c <= sv.size(); ++c) {
      if (c == sv.size() || sv[c] == ',') {
        f.push_back(sv.substr(start, c - start));
        start = c + 1;
      }
    }
    if (f.size() != 6)
      throw parse_error("op-log line " + std::to_string(line_no) + ": expected 6 fields, got " +
                        std::to_string(f.size()));
    OpRecord r;
    r.epoch = detail::parse_i64_field(f[0], line_no);
    r.iter = detail::parse_i64_field(f[1], line_no);
    if (f[2].size() != 1 || (f[2][0] != 'R' && f[2][0] != 'W'))
      throw parse_error("op-log line " + std::to_string(line_no) + ": kind must be R or W");
    r.kind = f[2][0];
    r.rank = static_cast<int>(detail::parse_i64_field(f[3], line_no));
    r.first_idx = detail::parse_i64_field(f[4], line_no);
    r.len = detail::parse_i64_field(f[5], line_no);
    out.push_back(r);
  }
  return out;
}

inline std::vector<OpRecord> parse_oplog_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open op-log: " + path);
  return parse_oplog(is);
}

struct OplogVerdict {
  bool ok = true;
  std::size_t line = 0;  // 1-based index of first offending record, 0 if ok
  std::string message;
};

// Checks the serialized bracket grammar: read/write pairs over windows of i
// consecutive ranks, the window advancing by i (mod i*j) per pair and never
// resetting at epoch boundaries. Within a bracket each window rank appears
// exactly once, in any order. The log may end only after a complete write
// bracket (or be empty).
inline OplogVerdict validate_oplog(const std::vector<OpRecord>& recs, int i, int j) {
  OplogVerdict v;
  auto fail = [&](std::size_t idx, const std::string& msg) {
    v.ok = false;
    v.line = idx + 1;
    v.message = msg;
    return v;
  };
  if (i < 1 || j < 1) return fail(0, "invalid (i, j)");
  if (recs.empty()) return v;  // vacuously fine

  const int nrank = i * j;
  std::int64_t pair = recs.front().iter;
  if (pair != 0) return fail(0, "first pair ordinal must be 0");
  std::int64_t epoch = recs.front().epoch;
  std::size_t idx = 0;
  while (idx < recs.size()) {
    const int window = static_cast<int>(pair % j) * i;
    for (int phase = 0; phase < 2; ++phase) {
      const char want = phase == 0 ? 'R' : 'W';
      std::vector<bool> seen(static_cast<std::size_t>(i), false);
      for (int n = 0; n < i; ++n, ++idx) {
        if (idx >= recs.size()) {
          if (want == 'R' && n == 0)
            return fail(idx - 1, "log ends after an incomplete pair (missing read bracket)");
          return fail(idx - 1, "log ends inside a bracket");
        }
        const OpRecord& r = recs[idx];
        if (r.iter != pair)
          return fail(idx, "pair ordinal " + std::to_string(r.iter) + ", expected " +
                               std::to_string(pair));
        if (r.epoch < epoch) return fail(idx, "epoch decreased");
        if (r.epoch != epoch) {
          if (want == 'W' || n != 0) return fail(idx, "epoch changed inside a pair");
          epoch = r.epoch;
        }
        if (r.kind != want)
          return fail(idx, std::string("expected kind ") + want + ", got " + r.kind);
        if (r.rank < 0 || r.rank >= nrank) return fail(idx, "rank out of range");
        if (r.rank < window || r.rank >= window + i)
          return fail(idx, "rank " + std::to_string(r.rank) + " outside window [" +
                               std::to_string(window) + ", " + std::to_string(window + i) + ")");
        if (seen[static_cast<std::size_t>(r.rank - window)])
          return fail(idx, "duplicate rank in bracket");
        seen[static_cast<std::size_t>(r.rank - window)] = true;
        if (r.len < 0) return fail(idx, "negative length");
      }
    }
    ++pair;
  }
  return v;
}

inline OplogVerdict validate_oplog_file(const std::string& path, int i, int j) {
  return validate_oplog(parse_oplog_file(path), i, j);
}

}  // namespace tgnn
