#pragma once

#include <cmath>
#include <span>

#include "tgnn/tensor.hpp"

namespace tgnn {

// phi(dt)_i = cos(dt * omega_i), learnable omega, no phase term.
inline void time_encode(std::span<const double> omega, double dt, std::span<double> out) {
  require_len(out, omega.size(), "time_encode");
  for (std::size_t i = 0; i < omega.size(); ++i) out[i] = std::cos(dt * omega[i]);
}

// d loss / d omega_i += dout_i * (-dt * sin(dt * omega_i))
inline void time_encode_backward(std::span<const double> omega, double dt,
                                 std::span<const double> dout,
                                 std::span<double> domega_acc) {
  require_len(dout, omega.size(), "time_encode_backward");
  require_len(domega_acc, omega.size(), "time_encode_backward");
  for (std::size_t i = 0; i < omega.size(); ++i) {
    domega_acc[i] += dout[i] * (-dt * std::sin(dt * omega[i]));
  }
}

}  // namespace tgnn
