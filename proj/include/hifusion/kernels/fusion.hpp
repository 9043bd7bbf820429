#pragma once

// Cross-scale kernels: feature-alignment L1, softmax-weighted level fusion and
// multi-head cross-attention. Analytic backward passes live next to each
// forward; tests check them against central differences at double precision.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hifusion/kernels/conv.hpp"

namespace hifusion::kernels {

enum class Reduction { kSum, kMean };

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> out(logits.size());
  if (logits.empty()) return out;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - mx);
  for (auto& v : out) v /= total;
  return out;
}

// ---- alignment loss ----
// maps[0] is Level-0; every map holds `batch` blocks of equal size. Returns
// the batch mean of sum_s reduce(|F_s - F_0|).

template <class T>
T alignment_loss_forward(const std::vector<std::span<const T>>& maps, int batch, Reduction red) {
  if (maps.size() < 2) return T(0);
  const std::size_t block = maps[0].size() / batch;
  const T scale = red == Reduction::kMean ? T(1) / static_cast<T>(block) : T(1);
  T total = 0;
  for (std::size_t s = 1; s < maps.size(); ++s) {
    T level = 0;
    for (std::size_t i = 0; i < maps[0].size(); ++i) level += std::abs(maps[s][i] - maps[0][i]);
    total += level * scale;
  }
  return total / static_cast<T>(batch);
}

template <class T>
void alignment_loss_backward(const std::vector<std::span<const T>>& maps, int batch, Reduction red,
                             T grad_out, const std::vector<std::span<T>>& grads) {
  if (maps.size() < 2) return;
  const std::size_t block = maps[0].size() / batch;
  const T scale = (red == Reduction::kMean ? T(1) / static_cast<T>(block) : T(1)) * grad_out /
                  static_cast<T>(batch);
  for (std::size_t s = 1; s < maps.size(); ++s) {
    for (std::size_t i = 0; i < maps[0].size(); ++i) {
      const T diff = maps[s][i] - maps[0][i];
      const T sgn = diff > 0 ? T(1) : (diff < 0 ? T(-1) : T(0));
      if (!grads[s].empty()) grads[s][i] += sgn * scale;
      if (!grads[0].empty()) grads[0][i] -= sgn * scale;
    }
  }
}

// ---- learnable weighted fusion: out = sum_s softmax(alpha)_s * F_s ----

template <class T>
void fuse_levels_forward(const std::vector<std::span<const T>>& maps, std::span<const T> alphas,
                         std::span<T> out) {
  const auto w = softmax<T>(alphas);
  std::fill(out.begin(), out.end(), T(0));
  for (std::size_t s = 0; s < maps.size(); ++s)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[s] * maps[s][i];
}

template <class T>
void fuse_levels_backward(const std::vector<std::span<const T>>& maps, std::span<const T> alphas,
                          std::span<const T> grad_out, const std::vector<std::span<T>>& grad_maps,
                          std::span<T> grad_alphas) {
  const auto w = softmax<T>(alphas);
  std::vector<T> inner(maps.size(), T(0));
  for (std::size_t s = 0; s < maps.size(); ++s) {
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
      inner[s] += grad_out[i] * maps[s][i];
      if (!grad_maps[s].empty()) grad_maps[s][i] += w[s] * grad_out[i];
    }
  }
  T mix = 0;
  for (std::size_t s = 0; s < maps.size(); ++s) mix += w[s] * inner[s];
  for (std::size_t s = 0; s < maps.size(); ++s) grad_alphas[s] += w[s] * (inner[s] - mix);
}

// ---- multi-head cross-attention, one query row per batch item ----
// q [B, d]; keys/values [B, t, d]; projections are [d, d] applied as x * W.
// Head h owns columns [h*dk, (h+1)*dk) of each projection.

struct AttentionShape {
  int batch = 1, tokens = 1, dim = 1, heads = 1;
  int head_dim() const { return dim / heads; }
};

template <class T>
struct AttentionCache {
  MatRM<T> qp, kp, vp, concat;
  std::vector<T> weights;  // [B, heads, t]
};

template <class T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const T> wq, std::span<const T> wk, std::span<const T> wv,
                       std::span<const T> wo, const AttentionShape& s, std::span<T> out,
                       AttentionCache<T>& cache) {
  using Map = Eigen::Map<const MatRM<T>>;
  const int B = s.batch, t = s.tokens, d = s.dim, H = s.heads, dk = s.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  cache.qp.noalias() = Map(q.data(), B, d) * Map(wq.data(), d, d);
  cache.kp.noalias() = Map(k.data(), B * t, d) * Map(wk.data(), d, d);
  cache.vp.noalias() = Map(v.data(), B * t, d) * Map(wv.data(), d, d);
  cache.concat.setZero(B, d);
  cache.weights.assign(static_cast<std::size_t>(B) * H * t, T(0));
  std::vector<T> logits(t);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      for (int j = 0; j < t; ++j) {
        T dot = 0;
        for (int e = 0; e < dk; ++e) dot += cache.qp(b, h * dk + e) * cache.kp(b * t + j, h * dk + e);
        logits[j] = dot * scale;
      }
      const auto a = softmax<T>(logits);
      T* wrow = cache.weights.data() + (static_cast<std::size_t>(b) * H + h) * t;
      for (int j = 0; j < t; ++j) {
        wrow[j] = a[j];
        for (int e = 0; e < dk; ++e) cache.concat(b, h * dk + e) += a[j] * cache.vp(b * t + j, h * dk + e);
      }
    }
  }
  Eigen::Map<MatRM<T>>(out.data(), B, d).noalias() = cache.concat * Map(wo.data(), d, d);
}

// Accumulates into every non-empty gradient span.
template <class T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> wq, std::span<const T> wk, std::span<const T> wv,
                        std::span<const T> wo, const AttentionShape& s, const AttentionCache<T>& cache,
                        std::span<const T> grad_out, std::span<T> gq, std::span<T> gk, std::span<T> gv,
                        std::span<T> gwq, std::span<T> gwk, std::span<T> gwv, std::span<T> gwo) {
  using Map = Eigen::Map<const MatRM<T>>;
  using MapW = Eigen::Map<MatRM<T>>;
  const int B = s.batch, t = s.tokens, d = s.dim, H = s.heads, dk = s.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  Map G(grad_out.data(), B, d);
  MapW(gwo.data(), d, d).noalias() += cache.concat.transpose() * G;
  const MatRM<T> gconcat = G * Map(wo.data(), d, d).transpose();

  MatRM<T> gqp = MatRM<T>::Zero(B, d), gkp = MatRM<T>::Zero(B * t, d), gvp = MatRM<T>::Zero(B * t, d);
  std::vector<T> ga(t);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      const T* a = cache.weights.data() + (static_cast<std::size_t>(b) * H + h) * t;
      T dot_aga = 0;
      for (int j = 0; j < t; ++j) {
        T g = 0;
        for (int e = 0; e < dk; ++e) {
          g += gconcat(b, h * dk + e) * cache.vp(b * t + j, h * dk + e);
          gvp(b * t + j, h * dk + e) += a[j] * gconcat(b, h * dk + e);
        }
        ga[j] = g;
        dot_aga += a[j] * g;
      }
      for (int j = 0; j < t; ++j) {
        const T glogit = a[j] * (ga[j] - dot_aga) * scale;
        for (int e = 0; e < dk; ++e) {
          gqp(b, h * dk + e) += glogit * cache.kp(b * t + j, h * dk + e);
          gkp(b * t + j, h * dk + e) += glogit * cache.qp(b, h * dk + e);
        }
      }
    }
  }
  Map Q(q.data(), B, d), K(k.data(), B * t, d), V(v.data(), B * t, d);
  if (!gwq.empty()) MapW(gwq.data(), d, d).noalias() += Q.transpose() * gqp;
  if (!gwk.empty()) MapW(gwk.data(), d, d).noalias() += K.transpose() * gkp;
  if (!gwv.empty()) MapW(gwv.data(), d, d).noalias() += V.transpose() * gvp;
  if (!gq.empty()) MapW(gq.data(), B, d).noalias() += gqp * Map(wq.data(), d, d).transpose();
  if (!gk.empty()) MapW(gk.data(), B * t, d).noalias() += gkp * Map(wk.data(), d, d).transpose();
  if (!gv.empty()) MapW(gv.data(), B * t, d).noalias() += gvp * Map(wv.data(), d, d).transpose();
}

}  // namespace hifusion::kernels
