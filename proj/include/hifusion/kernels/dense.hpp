#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>

#include "hifusion/kernels/conv.hpp"

namespace hifusion::kernels {

// y[rows, out] = x[rows, in] * W^T + b, W stored [out, in].
template <class T>
void linear_forward(std::span<const T> x, int rows, int in, int out, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  using Map = Eigen::Map<const MatRM<T>>;
  Eigen::Map<MatRM<T>> Y(y.data(), rows, out);
  Y.noalias() = Map(x.data(), rows, in) * Map(w.data(), out, in).transpose();
  if (!b.empty()) {
    for (int r = 0; r < rows; ++r)
      for (int o = 0; o < out; ++o) Y(r, o) += b[o];
  }
}

template <class T>
void linear_backward(std::span<const T> x, int rows, int in, int out, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  using Map = Eigen::Map<const MatRM<T>>;
  Map G(gy.data(), rows, out);
  Eigen::Map<MatRM<T>>(gw.data(), out, in).noalias() += G.transpose() * Map(x.data(), rows, in);
  if (!gb.empty()) {
    for (int r = 0; r < rows; ++r)
      for (int o = 0; o < out; ++o) gb[o] += G(r, o);
  }
  if (!gx.empty()) Eigen::Map<MatRM<T>>(gx.data(), rows, in).noalias() += G * Map(w.data(), out, in);
}

// (1/rows) * sum_r ||pred_r - target_r||^2, the per-spot squared L2 averaged over spots.
template <class T>
T mean_sq_norm(std::span<const T> pred, std::span<const T> target, int rows) {
  T total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    total += d * d;
  }
  return total / static_cast<T>(rows);
}

template <class T>
void mean_sq_norm_backward(std::span<const T> pred, std::span<const T> target, int rows, T grad_out,
                           std::span<T> gpred) {
  const T k = T(2) * grad_out / static_cast<T>(rows);
  for (std::size_t i = 0; i < pred.size(); ++i) gpred[i] += k * (pred[i] - target[i]);
}

}  // namespace hifusion::kernels
