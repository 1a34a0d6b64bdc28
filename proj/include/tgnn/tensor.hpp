#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgnn/common.hpp"
#include "tgnn/rng.hpp"

namespace tgnn {

struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense float64 tensor, contiguous row-major storage. Rank 1 and 2 cover
// everything this engine needs; shape is kept generic for serialization.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0);
  }

  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static Tensor zeros(std::initializer_list<std::size_t> shape) { return Tensor(shape); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  std::span<double> flat() { return {data_.data(), data_.size()}; }
  std::span<const double> flat() const { return {data_.data(), data_.size()}; }

  void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (double& x : data_) x = rng.next_range(lo, hi);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void require_len(std::span<const double> x, std::size_t n, const char* where) {
  if (x.size() != n) {
    throw shape_error(std::string(where) + ": expected length " + std::to_string(n) +
                      ", got " + std::to_string(x.size()));
  }
}

// out = W x + b. Pass an empty b to skip the bias.
inline void matvec(const Tensor& W, std::span<const double> x,
                   std::span<const double> b, std::span<double> out) {
  const std::size_t r = W.rows(), c = W.cols();
  if (x.size() != c || out.size() != r || (!b.empty() && b.size() != r)) {
    throw shape_error("matvec: dimension mismatch");
  }
  const double* w = W.data();
  for (std::size_t i = 0; i < r; ++i) {
    double acc = b.empty() ? 0.0 : b[i];
    const double* wi = w + i * c;
    for (std::size_t j = 0; j < c; ++j) acc += wi[j] * x[j];
    out[i] = acc;
  }
}

// dx += W^T dy
inline void matvec_t_acc(const Tensor& W, std::span<const double> dy,
                         std::span<double> dx) {
  const std::size_t r = W.rows(), c = W.cols();
  if (dy.size() != r || dx.size() != c) throw shape_error("matvec_t_acc: dimension mismatch");
  const double* w = W.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    const double* wi = w + i * c;
    for (std::size_t j = 0; j < c; ++j) dx[j] += g * wi[j];
  }
}

// dW += dy x^T
inline void outer_acc(Tensor& dW, std::span<const double> dy, std::span<const double> x) {
  const std::size_t r = dW.rows(), c = dW.cols();
  if (dy.size() != r || x.size() != c) throw shape_error("outer_acc: dimension mismatch");
  double* w = dW.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    double* wi = w + i * c;
    for (std::size_t j = 0; j < c; ++j) wi[j] += g * x[j];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw shape_error("dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw shape_error("axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace tgnn
