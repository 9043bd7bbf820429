#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace hifusion::kernels {

// ---- batch normalization over (N, H, W) per channel ----

struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
};

// Training mode: normalizes with batch statistics and returns them.
template <class T>
BatchNormCache batch_norm_train(std::span<const T> x, int n, int c, int hw, std::span<const T> gamma,
                                std::span<const T> beta, double eps, std::span<T> y) {
  BatchNormCache cache{std::vector<double>(c), std::vector<double>(c)};
  const double count = static_cast<double>(n) * hw;
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) sum += p[j];
    }
    const double mean = sum / count;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) {
        const double d = p[j] - mean;
        var += d * d;
      }
    }
    var /= count;
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.mean[ch] = mean;
    cache.inv_std[ch] = inv;
    const double a = gamma[ch] * inv;
    const double b = beta[ch] - mean * a;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) y[off + j] = static_cast<T>(x[off + j] * a + b);
    }
  }
  return cache;
}

// Inference mode with stored running statistics.
template <class T>
void batch_norm_eval(std::span<const T> x, int n, int c, int hw, std::span<const T> gamma,
                     std::span<const T> beta, std::span<const T> running_mean,
                     std::span<const T> running_var, double eps, std::span<T> y) {
  for (int ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
    const double a = gamma[ch] * inv;
    const double b = beta[ch] - running_mean[ch] * a;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) y[off + j] = static_cast<T>(x[off + j] * a + b);
    }
  }
}

template <class T>
void batch_norm_train_backward(std::span<const T> x, int n, int c, int hw, std::span<const T> gamma,
                               const BatchNormCache& cache, std::span<const T> gy, std::span<T> gx,
                               std::span<T> ggamma, std::span<T> gbeta) {
  const double count = static_cast<double>(n) * hw;
  for (int ch = 0; ch < c; ++ch) {
    const double mean = cache.mean[ch], inv = cache.inv_std[ch];
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) {
        sum_gy += gy[off + j];
        sum_gy_xhat += gy[off + j] * (x[off + j] - mean) * inv;
      }
    }
    ggamma[ch] += static_cast<T>(sum_gy_xhat);
    gbeta[ch] += static_cast<T>(sum_gy);
    if (gx.empty()) continue;
    const double k = gamma[ch] * inv / count;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) {
        const double xhat = (x[off + j] - mean) * inv;
        gx[off + j] += static_cast<T>(k * (count * gy[off + j] - sum_gy - xhat * sum_gy_xhat));
      }
    }
  }
}

// ---- layer normalization over the last dimension ----

template <class T>
void layer_norm_forward(std::span<const T> x, int rows, int d, std::span<const T> gamma,
                        std::span<const T> beta, double eps, std::span<T> y) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x.data() + static_cast<std::size_t>(r) * d;
    T* yr = y.data() + static_cast<std::size_t>(r) * d;
    T mean = 0;
    for (int i = 0; i < d; ++i) mean += xr[i];
    mean /= d;
    T var = 0;
    for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= d;
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (int i = 0; i < d; ++i) yr[i] = (xr[i] - mean) * inv * gamma[i] + beta[i];
  }
}

template <class T>
void layer_norm_backward(std::span<const T> x, int rows, int d, std::span<const T> gamma, double eps,
                         std::span<const T> gy, std::span<T> gx, std::span<T> ggamma,
                         std::span<T> gbeta) {
  std::vector<T> xhat(d), gxhat(d);
  for (int r = 0; r < rows; ++r) {
    const T* xr = x.data() + static_cast<std::size_t>(r) * d;
    const T* gr = gy.data() + static_cast<std::size_t>(r) * d;
    T mean = 0;
    for (int i = 0; i < d; ++i) mean += xr[i];
    mean /= d;
    T var = 0;
    for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= d;
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    T mean_g = 0, mean_gx = 0;
    for (int i = 0; i < d; ++i) {
      xhat[i] = (xr[i] - mean) * inv;
      gxhat[i] = gr[i] * gamma[i];
      ggamma[i] += gr[i] * xhat[i];
      gbeta[i] += gr[i];
      mean_g += gxhat[i];
      mean_gx += gxhat[i] * xhat[i];
    }
    if (gx.empty()) continue;
    mean_g /= d;
    mean_gx /= d;
    T* out = gx.data() + static_cast<std::size_t>(r) * d;
    for (int i = 0; i < d; ++i) out[i] += inv * (gxhat[i] - mean_g - xhat[i] * mean_gx);
  }
}

}  // namespace hifusion::kernels
