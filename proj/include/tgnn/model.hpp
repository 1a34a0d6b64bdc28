#pragma once

#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tgnn/attention.hpp"
#include "tgnn/decoder.hpp"
#include "tgnn/gru.hpp"
#include "tgnn/tensor.hpp"
#include "tgnn/time_encoding.hpp"

namespace tgnn {

struct ModelConfig {
  std::size_t d_mem = 100;
  std::size_t d_time = 100;
  std::size_t d_static = 100;  // 0 disables the static table entirely
  std::size_t d_attn = 100;
  std::size_t d_hidden = 0;    // 0 means d_mem
  std::size_t d_e = 0;
  std::size_t n_neighbors = 10;
  NodeId num_nodes = 0;
  double max_t = 1.0;  // timestamp scale for omega initialization

  std::size_t mail_dim() const { return 2 * d_mem + d_time + d_e; }
  std::size_t node_dim() const { return d_mem + d_static; }
  std::size_t q_in_dim() const { return node_dim() + d_time; }
  std::size_t kv_in_dim() const { return node_dim() + d_e + d_time; }
  std::size_t hidden_dim() const { return d_hidden ? d_hidden : d_mem; }
};

struct ModelParams {
  ModelConfig cfg;
  Tensor omega;         // [d_time]
  GruParams gru;
  AttnParams attn;
  Tensor static_table;  // [num_nodes, d_static], co-trained
  DecoderParams dec;
};

struct ModelGrads {
  Tensor omega;
  GruGrads gru;
  AttnGrads attn;
  Tensor static_table;
  DecoderGrads dec;
};

// Visits every learnable tensor with a stable name. Works for both
// ModelParams and ModelGrads since member names line up.
template <typename M, typename F>
void for_each_tensor(M& m, F&& f) {
  f("omega", m.omega);
  f("gru.Wz", m.gru.Wz);
  f("gru.Wr", m.gru.Wr);
  f("gru.Wh", m.gru.Wh);
  f("gru.bz", m.gru.bz);
  f("gru.br", m.gru.br);
  f("gru.bh", m.gru.bh);
  f("attn.Wq", m.attn.Wq);
  f("attn.bq", m.attn.bq);
  f("attn.Wk", m.attn.Wk);
  f("attn.bk", m.attn.bk);
  f("attn.Wv", m.attn.Wv);
  f("attn.bv", m.attn.bv);
  f("static_table", m.static_table);
  f("dec.W1", m.dec.W1);
  f("dec.b1", m.dec.b1);
  f("dec.W2", m.dec.W2);
  f("dec.b2", m.dec.b2);
}

inline void shape_params(const ModelConfig& cfg, ModelParams& p) {
  p.cfg = cfg;
  p.omega = Tensor({cfg.d_time});
  const std::size_t gin = cfg.mail_dim() + cfg.d_mem;
  p.gru.Wz = Tensor({cfg.d_mem, gin});
  p.gru.Wr = Tensor({cfg.d_mem, gin});
  p.gru.Wh = Tensor({cfg.d_mem, gin});
  p.gru.bz = Tensor({cfg.d_mem});
  p.gru.br = Tensor({cfg.d_mem});
  p.gru.bh = Tensor({cfg.d_mem});
  p.attn.Wq = Tensor({cfg.d_attn, cfg.q_in_dim()});
  p.attn.bq = Tensor({cfg.d_attn});
  p.attn.Wk = Tensor({cfg.d_attn, cfg.kv_in_dim()});
  p.attn.bk = Tensor({cfg.d_attn});
  p.attn.Wv = Tensor({cfg.d_attn, cfg.kv_in_dim()});
  p.attn.bv = Tensor({cfg.d_attn});
  p.static_table = Tensor({static_cast<std::size_t>(cfg.num_nodes), cfg.d_static});
  p.dec.W1 = Tensor({cfg.hidden_dim(), 2 * cfg.d_attn});
  p.dec.b1 = Tensor({cfg.hidden_dim()});
  p.dec.W2 = Tensor({1, cfg.hidden_dim()});
  p.dec.b2 = Tensor({1});
}

inline ModelGrads make_grads(const ModelConfig& cfg) {
  ModelParams tmp;
  shape_params(cfg, tmp);
  ModelGrads g;
  g.omega = std::move(tmp.omega);
  g.gru = {std::move(tmp.gru.Wz), std::move(tmp.gru.Wr), std::move(tmp.gru.Wh),
           std::move(tmp.gru.bz), std::move(tmp.gru.br), std::move(tmp.gru.bh)};
  g.attn = {std::move(tmp.attn.Wq), std::move(tmp.attn.bq), std::move(tmp.attn.Wk),
            std::move(tmp.attn.bk), std::move(tmp.attn.Wv), std::move(tmp.attn.bv)};
  g.static_table = std::move(tmp.static_table);
  g.dec = {std::move(tmp.dec.W1), std::move(tmp.dec.b1), std::move(tmp.dec.W2),
           std::move(tmp.dec.b2)};
  return g;
}

inline void zero_grads(ModelGrads& g) {
  for_each_tensor(g, [](const char*, Tensor& t) { t.zero(); });
}

// Weight matrices uniform in +-1/sqrt(fan_in), biases and the static table
// zero, omega log-spaced over [1e-5, 1] scaled by 1/max_t.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  shape_params(cfg, p);
  int slot = 0;
  for_each_tensor(p, [&](const char* name, Tensor& t) {
    ++slot;
    std::string n(name);
    if (n == "omega" || n == "static_table" || t.rank() < 2 || n == "dec.b2") return;
    Rng rng(hash64(seed, 0x696e6974ull, static_cast<std::uint64_t>(slot)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols()));
    t.fill_uniform(rng, -bound, bound);
  });
  const std::size_t dt = cfg.d_time;
  for (std::size_t i = 0; i < dt; ++i) {
    const double frac = dt == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(dt - 1);
    // 10^(-5 * (1 - frac)) spans 1e-5 .. 1
    p.omega[i] = std::pow(10.0, -5.0 * (1.0 - frac)) / std::max(cfg.max_t, 1e-12);
  }
  return p;
}

// {memory | static} concatenation; with d_static == 0 this is the identity on
// the memory half, so the no-static model falls out of the same code path.
inline void combine_static(std::span<const double> mem, std::span<const double> stat,
                           std::span<double> out) {
  require_len(out, mem.size() + stat.size(), "combine_static");
  std::copy(mem.begin(), mem.end(), out.begin());
  std::copy(stat.begin(), stat.end(), out.begin() + mem.size());
}

// Full mail vector {s_self | s_other | phi(dt) | e}. dt must be non-negative.
inline void make_mail(std::span<const double> omega, std::span<const double> s_self,
                      std::span<const double> s_other, double dt,
                      std::span<const double> efeat, std::span<double> out) {
  require_len(out, s_self.size() + s_other.size() + omega.size() + efeat.size(), "make_mail");
  if (dt < 0) throw shape_error("make_mail: negative time delta");
  std::size_t off = 0;
  std::copy(s_self.begin(), s_self.end(), out.begin() + off);
  off += s_self.size();
  std::copy(s_other.begin(), s_other.end(), out.begin() + off);
  off += s_other.size();
  time_encode(omega, dt, out.subspan(off, omega.size()));
  off += omega.size();
  std::copy(efeat.begin(), efeat.end(), out.begin() + off);
}

// Checkpoint: text manifest (name + shape per tensor) terminated by "data",
// followed by the tensors' float64 payload in manifest order. Host is assumed
// little-endian, matching the on-disk layout.
inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot write checkpoint: " + path);
  out << "tgnn-checkpoint v1\n";
  for_each_tensor(const_cast<ModelParams&>(p), [&](const char* name, Tensor& t) {
    out << "tensor " << name << " " << t.rank();
    for (std::size_t d : t.shape()) out << " " << d;
    out << "\n";
  });
  out << "data\n";
  for_each_tensor(const_cast<ModelParams&>(p), [&](const char*, Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  });
}

// Loads into an already-shaped parameter struct; refuses mismatched manifests.
inline void load_checkpoint(ModelParams& p, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "tgnn-checkpoint v1") {
    throw config_error("checkpoint: bad magic line in " + path);
  }
  std::vector<std::pair<std::string, std::vector<std::size_t>>> manifest;
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::istringstream ls(line);
    std::string kw, name;
    std::size_t rank;
    if (!(ls >> kw >> name >> rank) || kw != "tensor") {
      throw config_error("checkpoint: bad manifest line '" + line + "'");
    }
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) {
      if (!(ls >> d)) throw config_error("checkpoint: truncated shape in '" + line + "'");
    }
    manifest.emplace_back(name, shape);
  }
  std::size_t idx = 0;
  for_each_tensor(p, [&](const char* name, Tensor& t) {
    if (idx >= manifest.size() || manifest[idx].first != name ||
        manifest[idx].second != t.shape()) {
      throw config_error(std::string("checkpoint: manifest mismatch at tensor ") + name);
    }
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw config_error(std::string("checkpoint: truncated payload at ") + name);
    ++idx;
  });
  if (idx != manifest.size()) throw config_error("checkpoint: extra tensors in manifest");
}

}  // namespace tgnn
