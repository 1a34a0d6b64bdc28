#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tgnn/tensor.hpp"

namespace tgnn {

struct AttnParams {
  Tensor Wq, bq;  // [d_attn, q_in_dim]
  Tensor Wk, bk;  // [d_attn, kv_in_dim]
  Tensor Wv, bv;

  std::size_t d_attn() const { return Wq.rows(); }
  std::size_t q_in_dim() const { return Wq.cols(); }
  std::size_t kv_in_dim() const { return Wk.cols(); }
};

struct AttnGrads {
  Tensor Wq, bq, Wk, bk, Wv, bv;
};

struct AttnTape {
  std::vector<double> q_in;
  std::vector<std::vector<double>> kv_in;
  std::vector<double> q;
  std::vector<std::vector<double>> K, V;
  std::vector<double> a;  // softmax weights
};

// Single-head temporal attention over a root's sampled neighbor rows.
// Scores are scaled by sqrt of the neighbor count; an empty neighborhood
// produces the zero embedding.
inline void attention_forward(const AttnParams& p, std::span<const double> q_in,
                              const std::vector<std::vector<double>>& kv_in,
                              std::span<double> h_out, AttnTape* tape = nullptr) {
  const std::size_t da = p.d_attn();
  require_len(q_in, p.q_in_dim(), "attention q input");
  require_len(h_out, da, "attention output");

  std::fill(h_out.begin(), h_out.end(), 0.0);
  const std::size_t n = kv_in.size();
  if (tape) {
    tape->q_in.assign(q_in.begin(), q_in.end());
    tape->kv_in = kv_in;
    tape->K.clear();
    tape->V.clear();
    tape->a.clear();
  }
  if (n == 0) {
    if (tape) tape->q.clear();
    return;
  }

  std::vector<double> q(da);
  matvec(p.Wq, q_in, p.bq.flat(), q);

  std::vector<std::vector<double>> K(n), V(n);
  std::vector<double> scores(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    require_len(kv_in[i], p.kv_in_dim(), "attention kv input");
    K[i].resize(da);
    V[i].resize(da);
    matvec(p.Wk, kv_in[i], p.bk.flat(), K[i]);
    matvec(p.Wv, kv_in[i], p.bv.flat(), V[i]);
    scores[i] = dot(q, K[i]) * scale;
  }

  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double denom = 0;
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = std::exp(scores[i] - mx);
    denom += a[i];
  }
  for (std::size_t i = 0; i < n; ++i) a[i] /= denom;

  for (std::size_t i = 0; i < n; ++i) axpy(a[i], V[i], h_out);
  check_finite(h_out, "attention_forward");

  if (tape) {
    tape->q = std::move(q);
    tape->K = std::move(K);
    tape->V = std::move(V);
    tape->a = std::move(a);
  }
}

// Gradients for parameters plus both inputs. The caller decides which slices
// of dq_in / dkv_in to propagate further; neighbor memory slices are dropped
// there (constants under one-step truncation).
inline void attention_backward(const AttnParams& p, const AttnTape& t,
                               std::span<const double> dh, AttnGrads& g,
                               std::span<double> dq_in,
                               std::vector<std::vector<double>>& dkv_in) {
  const std::size_t da = p.d_attn();
  require_len(dh, da, "attention_backward upstream");
  require_len(dq_in, p.q_in_dim(), "attention_backward dq_in");

  const std::size_t n = t.kv_in.size();
  dkv_in.assign(n, std::vector<double>(n ? p.kv_in_dim() : 0, 0.0));
  if (n == 0) return;

  const double scale = 1.0 / std::sqrt(static_cast<double>(n));

  // dV_i = a_i * dh ; da_i = dh . V_i
  std::vector<double> da_w(n);
  std::vector<double> dV(da);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < da; ++j) dV[j] = t.a[i] * dh[j];
    outer_acc(g.Wv, dV, t.kv_in[i]);
    axpy(1.0, dV, g.bv.flat());
    matvec_t_acc(p.Wv, dV, dkv_in[i]);
    da_w[i] = dot(dh, t.V[i]);
  }

  // softmax jacobian: dz_i = a_i * (da_i - sum_j a_j da_j)
  double mixed = 0;
  for (std::size_t i = 0; i < n; ++i) mixed += t.a[i] * da_w[i];
  std::vector<double> dz(n);
  for (std::size_t i = 0; i < n; ++i) dz[i] = t.a[i] * (da_w[i] - mixed);

  std::vector<double> dq(da, 0.0), dK(da);
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = dz[i] * scale;
    axpy(gi, t.K[i], dq);
    for (std::size_t j = 0; j < da; ++j) dK[j] = gi * t.q[j];
    outer_acc(g.Wk, dK, t.kv_in[i]);
    axpy(1.0, dK, g.bk.flat());
    matvec_t_acc(p.Wk, dK, dkv_in[i]);
  }

  outer_acc(g.Wq, dq, t.q_in);
  axpy(1.0, dq, g.bq.flat());
  matvec_t_acc(p.Wq, dq, dq_in);
}

}  // namespace tgnn
