#pragma once

// im2col + GEMM convolution over NCHW batches. Templated on the scalar so the
// same code runs at float (training) and double (gradient checks).

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace hifusion::kernels {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeom {
  int n = 0, c = 0, h = 0, w = 0;
  int cout = 0, k = 1, stride = 1, pad = 0;

  int out_h() const { return (h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (w + 2 * pad - k) / stride + 1; }
  std::size_t patch() const { return static_cast<std::size_t>(c) * k * k; }
};

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

namespace detail {

// Images per GEMM chunk so the column buffer stays under ~8M scalars.
inline int conv_chunk(const ConvGeom& g) {
  const std::size_t per_image = g.patch() * g.out_h() * g.out_w();
  const std::size_t budget = std::size_t{1} << 23;
  return static_cast<int>(std::clamp<std::size_t>(budget / std::max<std::size_t>(per_image, 1), 1, g.n));
}

template <class T>
void im2col(const T* x, const ConvGeom& g, int n0, int n1, MatRM<T>& cols) {
  const int oh = g.out_h(), ow = g.out_w();
  const int span = (n1 - n0) * oh * ow;
  cols.setZero(static_cast<Eigen::Index>(g.patch()), span);
  for (int c = 0; c < g.c; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols.row((c * g.k + ky) * g.k + kx).data();
        for (int n = n0; n < n1; ++n) {
          const T* img = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          T* dst = row + static_cast<std::size_t>(n - n0) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) dst[oy * ow + ox] = img[iy * g.w + ix];
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const MatRM<T>& cols, const ConvGeom& g, int n0, int n1, T* gx) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int c = 0; c < g.c; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols.row((c * g.k + ky) * g.k + kx).data();
        for (int n = n0; n < n1; ++n) {
          T* img = gx + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          const T* src = row + static_cast<std::size_t>(n - n0) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) img[iy * g.w + ix] += src[oy * ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// y[n, cout, oh, ow]; weight is [cout, c, k, k]; bias may be empty.
template <class T>
void conv2d_forward(std::span<const T> x, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeom& g, std::span<T> y) {
  const int oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  Eigen::Map<const MatRM<T>> W(weight.data(), g.cout, static_cast<Eigen::Index>(g.patch()));
  const int chunk = detail::conv_chunk(g);
  MatRM<T> cols, out;
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int n1 = std::min(g.n, n0 + chunk);
    detail::im2col(x.data(), g, n0, n1, cols);
    out.noalias() = W * cols;
    for (int n = n0; n < n1; ++n) {
      for (int co = 0; co < g.cout; ++co) {
        const T* src = out.row(co).data() + (n - n0) * plane;
        T* dst = y.data() + (static_cast<std::size_t>(n) * g.cout + co) * plane;
        const T b = bias.empty() ? T(0) : bias[co];
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
      }
    }
  }
}

// Accumulates into gx (if non-empty), gw and gb (if non-empty).
template <class T>
void conv2d_backward(std::span<const T> x, std::span<const T> weight, std::span<const T> gy,
                     const ConvGeom& g, std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  const int oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const auto patch = static_cast<Eigen::Index>(g.patch());
  Eigen::Map<const MatRM<T>> W(weight.data(), g.cout, patch);
  Eigen::Map<MatRM<T>> GW(gw.data(), g.cout, patch);
  const int chunk = detail::conv_chunk(g);
  MatRM<T> cols, gyc, gcols;
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int n1 = std::min(g.n, n0 + chunk);
    gyc.resize(g.cout, static_cast<Eigen::Index>((n1 - n0) * plane));
    for (int n = n0; n < n1; ++n) {
      for (int co = 0; co < g.cout; ++co) {
        const T* src = gy.data() + (static_cast<std::size_t>(n) * g.cout + co) * plane;
        std::copy(src, src + plane, gyc.row(co).data() + (n - n0) * plane);
      }
    }
    if (!gb.empty()) {
      for (int co = 0; co < g.cout; ++co) gb[co] += gyc.row(co).sum();
    }
    detail::im2col(x.data(), g, n0, n1, cols);
    GW.noalias() += gyc * cols.transpose();
    if (!gx.empty()) {
      gcols.noalias() = W.transpose() * gyc;
      detail::col2im(gcols, g, n0, n1, gx.data());
    }
  }
}

}  // namespace hifusion::kernels
