#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tgnn/common.hpp"
#include "tgnn/model.hpp"
#include "tgnn/parallel.hpp"

// Run configuration as an ordered key=value map: a config file supplies
// defaults, command-line pairs override them, and the merged map is checked
// against the known key set before anything runs.

namespace tgnn {

struct RunManifest {
  std::string data;       // events CSV; metadata sidecar at <data>.meta
  std::string out = ".";  // output directory
  double train_frac = 0.70;
  double val_frac = 0.15;

  TrainConfig train;

  std::size_t d_mem = 100;
  std::size_t d_time = 100;
  std::size_t d_static = 100;
  std::size_t d_attn = 100;
  std::size_t d_hidden = 0;  // 0: d_mem
  std::size_t n_neighbors = 10;

  std::int64_t eval_batch = 0;  // 0: local_batch
  int eval_negatives = 49;

  // Planner inputs, used by the plan subcommand and --plan-only.
  std::int64_t max_safe = 0;
  std::int64_t saturation = 0;
  int copies = 1;

  bool oplog = false;          // op-log per memory copy
  bool schedule_dump = false;  // trainer/iteration table
  bool staleness = false;      // per-batch staleness and info-loss report

  ModelConfig model_config(NodeId num_nodes, double max_t, std::size_t d_e) const {
    ModelConfig m;
    m.d_mem = d_mem;
    m.d_time = d_time;
    m.d_static = d_static;
    m.d_attn = d_attn;
    m.d_hidden = d_hidden;
    m.d_e = d_e;
    m.n_neighbors = n_neighbors;
    m.num_nodes = num_nodes;
    m.max_t = max_t;
    return m;
  }
};

using KvMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::int64_t kv_int(const std::string& key, const std::string& val) {
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(val, &used);
    if (used != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw config_error("config: " + key + " expects an integer, got '" + val + "'");
  }
}

inline double kv_double(const std::string& key, const std::string& val) {
  try {
    std::size_t used = 0;
    const double v = std::stod(val, &used);
    if (used != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw config_error("config: " + key + " expects a number, got '" + val + "'");
  }
}

inline std::uint64_t kv_uint(const std::string& key, const std::string& val) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(val, &used);
    if (used != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw config_error("config: " + key + " expects a non-negative integer, got '" + val + "'");
  }
}

inline bool kv_bool(const std::string& key, const std::string& val) {
  if (val == "1" || val == "true" || val == "yes") return true;
  if (val == "0" || val == "false" || val == "no") return false;
  throw config_error("config: " + key + " expects a boolean, got '" + val + "'");
}

inline int kv_int32(const std::string& key, const std::string& val) {
  const std::int64_t v = kv_int(key, val);
  if (v < INT32_MIN || v > INT32_MAX) throw config_error("config: " + key + " out of range");
  return static_cast<int>(v);
}

}  // namespace detail

// Lines of `key=value`; blank lines and lines starting with # are skipped.
inline KvMap parse_config_text(std::istream& in, const std::string& origin) {
  KvMap kv;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw parse_error(origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
  }
  return kv;
}

inline KvMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  return parse_config_text(in, path);
}

// One `key=value` token, as passed with --set on the command line.
inline void apply_override(KvMap& kv, const std::string& token) {
  const auto eq = token.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw config_error("override '" + token + "' is not key=value");
  }
  kv[detail::trim(token.substr(0, eq))] = detail::trim(token.substr(eq + 1));
}

inline RunManifest manifest_from_kv(const KvMap& kv) {
  RunManifest m;
  for (const auto& [key, val] : kv) {
    if (key == "data") m.data = val;
    else if (key == "out") m.out = val;
    else if (key == "train_frac") m.train_frac = detail::kv_double(key, val);
    else if (key == "val_frac") m.val_frac = detail::kv_double(key, val);
    else if (key == "i") m.train.i = detail::kv_int32(key, val);
    else if (key == "j") m.train.j = detail::kv_int32(key, val);
    else if (key == "k") m.train.k = detail::kv_int32(key, val);
    else if (key == "p") m.train.p = detail::kv_int32(key, val);
    else if (key == "q") m.train.q = detail::kv_int32(key, val);
    else if (key == "local_batch") m.train.local_batch = detail::kv_int(key, val);
    else if (key == "lr_base") m.train.lr_base = detail::kv_double(key, val);
    else if (key == "epochs") m.train.epochs = detail::kv_int32(key, val);
    else if (key == "seed") m.train.seed = detail::kv_uint(key, val);
    else if (key == "local_batch_ref") m.train.local_batch_ref = detail::kv_int(key, val);
    else if (key == "neg_groups") m.train.neg_groups = detail::kv_int(key, val);
    else if (key == "d_mem") m.d_mem = static_cast<std::size_t>(detail::kv_int(key, val));
    else if (key == "d_time") m.d_time = static_cast<std::size_t>(detail::kv_int(key, val));
    else if (key == "d_static") m.d_static = static_cast<std::size_t>(detail::kv_int(key, val));
    else if (key == "d_attn") m.d_attn = static_cast<std::size_t>(detail::kv_int(key, val));
    else if (key == "d_hidden") m.d_hidden = static_cast<std::size_t>(detail::kv_int(key, val));
    else if (key == "n_neighbors")
      m.n_neighbors = static_cast<std::size_t>(detail::kv_int(key, val));
    else if (key == "eval_batch") m.eval_batch = detail::kv_int(key, val);
    else if (key == "eval_negatives") m.eval_negatives = detail::kv_int32(key, val);
    else if (key == "max_safe") m.max_safe = detail::kv_int(key, val);
    else if (key == "saturation") m.saturation = detail::kv_int(key, val);
    else if (key == "copies") m.copies = detail::kv_int32(key, val);
    else if (key == "oplog") m.oplog = detail::kv_bool(key, val);
    else if (key == "schedule_dump") m.schedule_dump = detail::kv_bool(key, val);
    else if (key == "staleness") m.staleness = detail::kv_bool(key, val);
    else throw config_error("config: unknown key '" + key + "'");
  }
  if (m.train_frac <= 0 || m.val_frac < 0 || m.train_frac + m.val_frac > 1.0) {
    throw config_error("config: train_frac/val_frac must satisfy 0 < train, 0 <= val, sum <= 1");
  }
  if (m.eval_negatives < 0) throw config_error("config: eval_negatives must be >= 0");
  return m;
}

}  // namespace tgnn
