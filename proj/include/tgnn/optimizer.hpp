#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tgnn/model.hpp"

namespace tgnn {

inline std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_tensor(const_cast<ModelParams&>(p),
                  [&](const char*, Tensor& t) { n += t.flat().size(); });
  return n;
}

// Serializes gradients in the canonical tensor order; every trainer flattens
// and averages in the same order so replicas stay bitwise identical.
inline void flatten_grads(const ModelGrads& g, std::span<double> out) {
  std::size_t at = 0;
  for_each_tensor(const_cast<ModelGrads&>(g), [&](const char*, Tensor& t) {
    auto f = t.flat();
    if (at + f.size() > out.size()) throw shape_error("flatten_grads: buffer too small");
    std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>(at));
    at += f.size();
  });
  if (at != out.size()) throw shape_error("flatten_grads: buffer size mismatch");
}

class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void step(ModelParams& p, std::span<const double> flat_grads, double lr) {
    if (flat_grads.size() != m_.size()) throw shape_error("adam: gradient size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    std::size_t at = 0;
    for_each_tensor(p, [&](const char*, Tensor& t) {
      auto w = t.flat();
      for (std::size_t x = 0; x < w.size(); ++x, ++at) {
        const double g = flat_grads[at];
        m_[at] = beta1 * m_[at] + (1.0 - beta1) * g;
        v_[at] = beta2 * v_[at] + (1.0 - beta2) * g * g;
        w[x] -= lr * (m_[at] / c1) / (std::sqrt(v_[at] / c2) + eps);
      }
    });
    if (at != m_.size()) throw shape_error("adam: parameter size mismatch");
  }

 private:
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace tgnn
