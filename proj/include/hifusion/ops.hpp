#pragma once

// Differentiable float ops recorded on the autograd tape. Each wraps a
// templated kernel from hifusion/kernels.

#include <vector>

#include "hifusion/autograd.hpp"
#include "hifusion/kernels/fusion.hpp"

namespace hifusion::ops {

using ag::Var;
using kernels::Reduction;

Var add(const Var& a, const Var& b);
Var scale(const Var& a, float k);
Var relu(const Var& x);

// x [N, C, H, W], weight [Cout, C, k, k], bias [Cout] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

// Training mode normalizes with batch statistics and updates the running
// buffers; eval mode uses the buffers.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

Var max_pool(const Var& x, int k, int stride, int pad);

// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);

// [N, C, H, W] -> [N, C, k, k]
Var adaptive_avg_pool(const Var& x, int k);

// [N, C, k, k] -> [N, k*k, C], tokens row-major over the k x k grid.
Var to_tokens(const Var& x);

// [N, t, C] -> [N, C]
Var mean_tokens(const Var& tokens);

Var resize_bilinear(const Var& x, int out_h, int out_w);

// [N, C, g*h, g*w] -> [N*g*g, C, h, w] (row-major patches) and the inverse.
Var tile_split(const Var& x, int g);
Var tile_merge(const Var& x, int g);

// x [R, in], weight [out, in], bias [out] or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps);

// q [N, d]; keys/values [N, t, d]; projections [d, d]. When `weights` is
// non-null it receives the attention distribution [N, heads, t].
Var cross_attention(const Var& q, const Var& keys, const Var& values, const Var& wq, const Var& wk,
                    const Var& wv, const Var& wo, int heads, std::vector<float>* weights = nullptr);

// Softmax(alphas)-weighted sum of equally shaped maps.
Var fuse_levels(const std::vector<Var>& maps, const Var& alphas);

// maps[0] is Level-0; batch mean of summed per-level L1 distances.
Var alignment_loss(const std::vector<Var>& maps, Reduction reduction);

// (1/N) sum_i ||pred_i - target_i||^2 with rows = first dimension.
Var mean_sq_norm(const Var& pred, const Tensor& target);

}  // namespace hifusion::ops
