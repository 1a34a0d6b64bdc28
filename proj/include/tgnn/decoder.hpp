#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tgnn/tensor.hpp"

namespace tgnn {

struct DecoderParams {
  Tensor W1, b1;  // [d_hidden, 2 * d_attn]
  Tensor W2;      // [1, d_hidden]
  Tensor b2;      // [1]

  std::size_t d_hidden() const { return W1.rows(); }
  std::size_t in_dim() const { return W1.cols(); }
};

struct DecoderGrads {
  Tensor W1, b1, W2, b2;
};

struct DecoderTape {
  std::vector<double> in;      // {h_u | h_v}
  std::vector<double> hidden;  // post-relu
};

// logit = W2 relu(W1 {h_u|h_v} + b1) + b2
inline double decode_link(const DecoderParams& p, std::span<const double> h_u,
                          std::span<const double> h_v, DecoderTape* tape = nullptr) {
  const std::size_t half = p.in_dim() / 2;
  require_len(h_u, half, "decode_link h_u");
  require_len(h_v, half, "decode_link h_v");

  std::vector<double> in(p.in_dim());
  std::copy(h_u.begin(), h_u.end(), in.begin());
  std::copy(h_v.begin(), h_v.end(), in.begin() + half);

  std::vector<double> hidden(p.d_hidden());
  matvec(p.W1, in, p.b1.flat(), hidden);
  for (double& x : hidden) x = x > 0 ? x : 0.0;

  double logit = p.b2[0];
  for (std::size_t i = 0; i < hidden.size(); ++i) logit += p.W2[i] * hidden[i];
  check_finite(logit, "decode_link");

  if (tape) {
    tape->in = std::move(in);
    tape->hidden = std::move(hidden);
  }
  return logit;
}

inline void decode_link_backward(const DecoderParams& p, const DecoderTape& t,
                                 double dlogit, DecoderGrads& g, std::span<double> dh_u,
                                 std::span<double> dh_v) {
  const std::size_t half = p.in_dim() / 2;
  require_len(dh_u, half, "decode_link_backward dh_u");
  require_len(dh_v, half, "decode_link_backward dh_v");

  g.b2[0] += dlogit;
  std::vector<double> dhidden(p.d_hidden());
  for (std::size_t i = 0; i < dhidden.size(); ++i) {
    g.W2[i] += dlogit * t.hidden[i];
    dhidden[i] = t.hidden[i] > 0 ? dlogit * p.W2[i] : 0.0;
  }
  outer_acc(g.W1, dhidden, t.in);
  axpy(1.0, dhidden, g.b1.flat());

  std::vector<double> din(p.in_dim(), 0.0);
  matvec_t_acc(p.W1, dhidden, din);
  for (std::size_t i = 0; i < half; ++i) {
    dh_u[i] += din[i];
    dh_v[i] += din[half + i];
  }
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// Binary cross-entropy on logits: mean softplus(-pos) + mean softplus(neg).
// All-zero logits give exactly 2 ln 2.
inline double bce_loss(std::span<const double> pos, std::span<const double> neg) {
  double loss = 0;
  if (!pos.empty()) {
    double acc = 0;
    for (double x : pos) acc += softplus(-x);
    loss += acc / static_cast<double>(pos.size());
  }
  if (!neg.empty()) {
    double acc = 0;
    for (double x : neg) acc += softplus(x);
    loss += acc / static_cast<double>(neg.size());
  }
  return loss;
}

// Gradients of bce_loss w.r.t. the logits.
inline void bce_backward(std::span<const double> pos, std::span<const double> neg,
                         std::span<double> dpos, std::span<double> dneg) {
  require_len(dpos, pos.size(), "bce_backward dpos");
  require_len(dneg, neg.size(), "bce_backward dneg");
  const double np = pos.empty() ? 1.0 : static_cast<double>(pos.size());
  const double nn = neg.empty() ? 1.0 : static_cast<double>(neg.size());
  for (std::size_t i = 0; i < pos.size(); ++i) dpos[i] = -sigmoid(-pos[i]) / np;
  for (std::size_t i = 0; i < neg.size(); ++i) dneg[i] = sigmoid(neg[i]) / nn;
}

}  // namespace tgnn
