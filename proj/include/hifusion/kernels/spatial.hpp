#pragma once

// Spatial rearrangement and pooling kernels over NCHW planes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace hifusion::kernels {

// ---- max pooling; `argmax` receives the flat input index per output ----

template <class T>
void max_pool_forward(std::span<const T> x, int planes, int h, int w, int k, int stride, int pad,
                      std::span<T> y, std::vector<int>& argmax) {
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  argmax.assign(static_cast<std::size_t>(planes) * oh * ow, -1);
  for (int p = 0; p < planes; ++p) {
    const std::size_t in_off = static_cast<std::size_t>(p) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        int best_i = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const int idx = iy * w + ix;
            if (best_i < 0 || x[in_off + idx] > best) {
              best = x[in_off + idx];
              best_i = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * oh + oy) * ow + ox;
        y[o] = best;
        argmax[o] = static_cast<int>(in_off) + best_i;
      }
    }
  }
}

// ---- adaptive average pooling to (kh, kw) bins ----
// Bin r covers [floor(r*h/k), ceil((r+1)*h/k)).

inline int bin_start(int r, int in, int k) { return (r * in) / k; }
inline int bin_end(int r, int in, int k) { return ((r + 1) * in + k - 1) / k; }

template <class T>
void adaptive_avg_pool_forward(std::span<const T> x, int planes, int h, int w, int kh, int kw,
                               std::span<T> y) {
  for (int p = 0; p < planes; ++p) {
    const T* src = x.data() + static_cast<std::size_t>(p) * h * w;
    for (int r = 0; r < kh; ++r) {
      const int y0 = bin_start(r, h, kh), y1 = bin_end(r, h, kh);
      for (int c = 0; c < kw; ++c) {
        const int x0 = bin_start(c, w, kw), x1 = bin_end(c, w, kw);
        T sum = 0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) sum += src[yy * w + xx];
        y[(static_cast<std::size_t>(p) * kh + r) * kw + c] = sum / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
}

template <class T>
void adaptive_avg_pool_backward(std::span<const T> gy, int planes, int h, int w, int kh, int kw,
                                std::span<T> gx) {
  for (int p = 0; p < planes; ++p) {
    T* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
    for (int r = 0; r < kh; ++r) {
      const int y0 = bin_start(r, h, kh), y1 = bin_end(r, h, kh);
      for (int c = 0; c < kw; ++c) {
        const int x0 = bin_start(c, w, kw), x1 = bin_end(c, w, kw);
        const T g = gy[(static_cast<std::size_t>(p) * kh + r) * kw + c] / static_cast<T>((y1 - y0) * (x1 - x0));
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) dst[yy * w + xx] += g;
      }
    }
  }
}

// ---- bilinear resize, half-pixel centers (corner alignment off) ----

struct LerpIndex {
  int i0 = 0, i1 = 0;
  double frac = 0.0;
};

inline std::vector<LerpIndex> lerp_table(int in, int out) {
  std::vector<LerpIndex> table(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    const int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
    table[o] = {i0, std::min(i0 + 1, in - 1), src - i0};
  }
  return table;
}

template <class T>
void bilinear_resize_forward(std::span<const T> x, int planes, int h, int w, int oh, int ow,
                             std::span<T> y) {
  if (h == oh && w == ow) {
    std::copy(x.begin(), x.end(), y.begin());
    return;
  }
  const auto ty = lerp_table(h, oh), tx = lerp_table(w, ow);
  for (int p = 0; p < planes; ++p) {
    const T* src = x.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = y.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const auto& ly = ty[oy];
      for (int ox = 0; ox < ow; ++ox) {
        const auto& lx = tx[ox];
        const T fy = static_cast<T>(ly.frac), fx = static_cast<T>(lx.frac);
        const T top = src[ly.i0 * w + lx.i0] * (1 - fx) + src[ly.i0 * w + lx.i1] * fx;
        const T bot = src[ly.i1 * w + lx.i0] * (1 - fx) + src[ly.i1 * w + lx.i1] * fx;
        dst[oy * ow + ox] = top * (1 - fy) + bot * fy;
      }
    }
  }
}

template <class T>
void bilinear_resize_backward(std::span<const T> gy, int planes, int h, int w, int oh, int ow,
                              std::span<T> gx) {
  if (h == oh && w == ow) {
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    return;
  }
  const auto ty = lerp_table(h, oh), tx = lerp_table(w, ow);
  for (int p = 0; p < planes; ++p) {
    const T* g = gy.data() + static_cast<std::size_t>(p) * oh * ow;
    T* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      const auto& ly = ty[oy];
      for (int ox = 0; ox < ow; ++ox) {
        const auto& lx = tx[ox];
        const T fy = static_cast<T>(ly.frac), fx = static_cast<T>(lx.frac);
        const T v = g[oy * ow + ox];
        dst[ly.i0 * w + lx.i0] += v * (1 - fy) * (1 - fx);
        dst[ly.i0 * w + lx.i1] += v * (1 - fy) * fx;
        dst[ly.i1 * w + lx.i0] += v * fy * (1 - fx);
        dst[ly.i1 * w + lx.i1] += v * fy * fx;
      }
    }
  }
}

// ---- g x g tiling ----
// Input [n, c, g*h, g*w] <-> patches [n*g*g, c, h, w], patches row-major per image.
// `to_patches` selects the direction; both are exact permutations.

template <class T>
void tile_permute(std::span<const T> src, int n, int c, int g, int h, int w, bool to_patches,
                  std::span<T> dst) {
  const int H = g * h, W = g * w;
  for (int i = 0; i < n; ++i) {
    for (int pr = 0; pr < g; ++pr) {
      for (int pc = 0; pc < g; ++pc) {
        const std::size_t patch = (static_cast<std::size_t>(i) * g + pr) * g + pc;
        for (int ch = 0; ch < c; ++ch) {
          for (int y = 0; y < h; ++y) {
            const std::size_t whole = ((static_cast<std::size_t>(i) * c + ch) * H + pr * h + y) * W + pc * w;
            const std::size_t part = ((patch * c + ch) * h + y) * w;
            if (to_patches)
              std::copy_n(src.data() + whole, w, dst.data() + part);
            else
              std::copy_n(src.data() + part, w, dst.data() + whole);
          }
        }
      }
    }
  }
}

}  // namespace hifusion::kernels
