#pragma once

#include <span>
#include <vector>

#include "tgnn/tensor.hpp"

namespace tgnn {

struct GruParams {
  Tensor Wz, Wr, Wh;  // [d_mem, mail_dim + d_mem]
  Tensor bz, br, bh;  // [d_mem]

  std::size_t d_mem() const { return Wz.rows(); }
  std::size_t mail_dim() const { return Wz.cols() - Wz.rows(); }
};

struct GruGrads {
  Tensor Wz, Wr, Wh, bz, br, bh;
};

// Saved forward state for one cell application.
struct GruTape {
  std::vector<double> m;       // mail input
  std::vector<double> s;       // previous memory (constant w.r.t. gradients)
  std::vector<double> z, r, h; // gate activations and candidate
};

// s_new = (1 - z) * s + z * h,  z/r/h from the standard gated update on {m | s}.
// The stored memory s is a constant input: gradients stop at the cell boundary
// and never chain into earlier updates (one-step truncation).
inline void gru_update(const GruParams& p, std::span<const double> m,
                       std::span<const double> s, std::span<double> s_new,
                       GruTape* tape = nullptr) {
  const std::size_t d = p.d_mem(), md = p.mail_dim();
  require_len(m, md, "gru_update mail");
  require_len(s, d, "gru_update memory");
  require_len(s_new, d, "gru_update output");

  std::vector<double> ms(md + d);
  std::copy(m.begin(), m.end(), ms.begin());
  std::copy(s.begin(), s.end(), ms.begin() + md);

  std::vector<double> z(d), r(d), h(d);
  matvec(p.Wz, ms, p.bz.flat(), z);
  matvec(p.Wr, ms, p.br.flat(), r);
  for (std::size_t i = 0; i < d; ++i) {
    z[i] = sigmoid(z[i]);
    r[i] = sigmoid(r[i]);
  }
  std::vector<double> mrs(md + d);
  std::copy(m.begin(), m.end(), mrs.begin());
  for (std::size_t i = 0; i < d; ++i) mrs[md + i] = r[i] * s[i];
  matvec(p.Wh, mrs, p.bh.flat(), h);
  for (std::size_t i = 0; i < d; ++i) h[i] = std::tanh(h[i]);

  for (std::size_t i = 0; i < d; ++i) s_new[i] = (1.0 - z[i]) * s[i] + z[i] * h[i];
  check_finite(s_new, "gru_update");

  if (tape) {
    tape->m.assign(m.begin(), m.end());
    tape->s.assign(s.begin(), s.end());
    tape->z = std::move(z);
    tape->r = std::move(r);
    tape->h = std::move(h);
  }
}

// Accumulates parameter gradients and adds the mail-input gradient into dm.
// No gradient flows to s by design.
inline void gru_backward(const GruParams& p, const GruTape& t,
                         std::span<const double> ds_new, GruGrads& g,
                         std::span<double> dm) {
  const std::size_t d = p.d_mem(), md = p.mail_dim();
  require_len(ds_new, d, "gru_backward upstream");
  require_len(dm, md, "gru_backward dm");

  std::vector<double> ms(md + d), mrs(md + d);
  std::copy(t.m.begin(), t.m.end(), ms.begin());
  std::copy(t.s.begin(), t.s.end(), ms.begin() + md);
  std::copy(t.m.begin(), t.m.end(), mrs.begin());
  for (std::size_t i = 0; i < d; ++i) mrs[md + i] = t.r[i] * t.s[i];

  std::vector<double> da_z(d), da_h(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double dz = ds_new[i] * (t.h[i] - t.s[i]);
    const double dh = ds_new[i] * t.z[i];
    da_z[i] = dz * t.z[i] * (1.0 - t.z[i]);
    da_h[i] = dh * (1.0 - t.h[i] * t.h[i]);
  }

  outer_acc(g.Wh, da_h, mrs);
  axpy(1.0, da_h, g.bh.flat());
  std::vector<double> d_mrs(md + d, 0.0);
  matvec_t_acc(p.Wh, da_h, d_mrs);

  std::vector<double> da_r(d);
  for (std::size_t i = 0; i < d; ++i) {
    da_r[i] = d_mrs[md + i] * t.s[i] * t.r[i] * (1.0 - t.r[i]);
  }

  outer_acc(g.Wz, da_z, ms);
  axpy(1.0, da_z, g.bz.flat());
  outer_acc(g.Wr, da_r, ms);
  axpy(1.0, da_r, g.br.flat());

  std::vector<double> d_ms(md + d, 0.0);
  matvec_t_acc(p.Wz, da_z, d_ms);
  matvec_t_acc(p.Wr, da_r, d_ms);

  for (std::size_t i = 0; i < md; ++i) dm[i] += d_ms[i] + d_mrs[i];
}

}  // namespace tgnn
