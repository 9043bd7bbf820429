#include "hifusion/ops.hpp"

#include <algorithm>
#include <memory>

#include "hifusion/error.hpp"
#include "hifusion/kernels/conv.hpp"
#include "hifusion/kernels/dense.hpp"
#include "hifusion/kernels/norm.hpp"
#include "hifusion/kernels/spatial.hpp"

namespace hifusion::ops {

namespace {

using ag::Node;
using Span = std::span<float>;
using CSpan = std::span<const float>;

// Grad buffer of input i, or an empty span when that input takes no grad.
Span in_grad(Node& node, std::size_t i) {
  auto& in = node.inputs[i];
  if (!in->requires_grad) return {};
  return in->grad_buffer().data();
}

CSpan in_value(const Node& node, std::size_t i) { return node.inputs[i]->value.data(); }

void require_rank(const Var& v, std::size_t rank, const char* op) {
  require(v.defined() && v.value().rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
              (v.defined() ? shape_str(v.shape()) : std::string("undefined")));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return ag::record(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      Span g = in_grad(n, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var scale(const Var& a, float k) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= k;
  return ag::record(std::move(out), {a}, [k](Node& n) {
    Span g = in_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * n.grad[i];
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::max(v, 0.0f);
  return ag::record(std::move(out), {x}, [](Node& n) {
    Span g = in_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (n.value[i] > 0.0f) g[i] += n.grad[i];
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  kernels::ConvGeom g{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3],
                      weight.shape()[0], weight.shape()[2], stride, pad};
  require(weight.shape()[1] == g.c, "conv2d: input has " + std::to_string(g.c) + " channels, weight expects " +
                                        std::to_string(weight.shape()[1]));
  require(g.out_h() > 0 && g.out_w() > 0, "conv2d: input " + shape_str(x.shape()) + " too small");
  Tensor out({g.n, g.cout, g.out_h(), g.out_w()});
  CSpan b = bias.defined() ? bias.value().data() : CSpan{};
  kernels::conv2d_forward<float>(x.value().data(), weight.value().data(), b, g, out.data());
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return ag::record(std::move(out), std::move(inputs), [g, has_bias](Node& n) {
    kernels::conv2d_backward<float>(in_value(n, 0), in_value(n, 1), n.grad.data(), g, in_grad(n, 0),
                                    n.inputs[1]->grad_buffer().data(), has_bias ? in_grad(n, 2) : Span{});
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
  require_rank(x, 4, "batch_norm");
  const int N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  require(gamma.value().numel() == static_cast<std::size_t>(C), "batch_norm: channel mismatch");
  Tensor out(x.shape());
  if (!training) {
    kernels::batch_norm_eval<float>(x.value().data(), N, C, HW, gamma.value().data(), beta.value().data(),
                                    state.running_mean.data(), state.running_var.data(), state.eps,
                                    out.data());
    return ag::record(std::move(out), {x, gamma, beta}, [N, C, HW, &state](Node& n) {
      // Frozen statistics: an affine map per channel.
      CSpan gam = in_value(n, 1);
      CSpan xv = in_value(n, 0);
      Span gx = in_grad(n, 0), gg = in_grad(n, 1), gb = in_grad(n, 2);
      for (int c = 0; c < C; ++c) {
        const float inv = 1.0f / std::sqrt(state.running_var[c] + state.eps);
        for (int i = 0; i < N; ++i) {
          const std::size_t off = (static_cast<std::size_t>(i) * C + c) * HW;
          for (int j = 0; j < HW; ++j) {
            const float gy = n.grad[off + j];
            if (!gx.empty()) gx[off + j] += gy * gam[c] * inv;
            if (!gg.empty()) gg[c] += gy * (xv[off + j] - state.running_mean[c]) * inv;
            if (!gb.empty()) gb[c] += gy;
          }
        }
      }
    });
  }
  auto cache = std::make_shared<kernels::BatchNormCache>(kernels::batch_norm_train<float>(
      x.value().data(), N, C, HW, gamma.value().data(), beta.value().data(), state.eps, out.data()));
  const double count = static_cast<double>(N) * HW;
  for (int c = 0; c < C; ++c) {
    const double var = 1.0 / (cache->inv_std[c] * cache->inv_std[c]) - state.eps;
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    state.running_mean[c] = static_cast<float>((1 - state.momentum) * state.running_mean[c] + state.momentum * cache->mean[c]);
    state.running_var[c] = static_cast<float>((1 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
  }
  return ag::record(std::move(out), {x, gamma, beta}, [N, C, HW, cache](Node& n) {
    kernels::batch_norm_train_backward<float>(in_value(n, 0), N, C, HW, in_value(n, 1), *cache, n.grad.data(),
                                              in_grad(n, 0), n.inputs[1]->grad_buffer().data(),
                                              n.inputs[2]->grad_buffer().data());
  });
}

Var max_pool(const Var& x, int k, int stride, int pad) {
  require_rank(x, 4, "max_pool");
  const auto& s = x.shape();
  const int oh = (s[2] + 2 * pad - k) / stride + 1, ow = (s[3] + 2 * pad - k) / stride + 1;
  Tensor out({s[0], s[1], oh, ow});
  auto argmax = std::make_shared<std::vector<int>>();
  kernels::max_pool_forward<float>(x.value().data(), s[0] * s[1], s[2], s[3], k, stride, pad, out.data(), *argmax);
  return ag::record(std::move(out), {x}, [argmax](Node& n) {
    Span g = in_grad(n, 0);
    if (g.empty()) return;
    for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += n.grad[i];
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const auto& s = x.shape();
  const int N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor out({N, C});
  for (int i = 0; i < N * C; ++i) {
    double sum = 0.0;
    for (int j = 0; j < HW; ++j) sum += x.value()[static_cast<std::size_t>(i) * HW + j];
    out[i] = static_cast<float>(sum / HW);
  }
  return ag::record(std::move(out), {x}, [N, C, HW](Node& n) {
    Span g = in_grad(n, 0);
    for (int i = 0; i < N * C; ++i) {
      const float v = n.grad[i] / HW;
      for (int j = 0; j < HW; ++j) g[static_cast<std::size_t>(i) * HW + j] += v;
    }
  });
}

Var adaptive_avg_pool(const Var& x, int k) {
  require_rank(x, 4, "adaptive_avg_pool");
  const auto& s = x.shape();
  require(k >= 1 && k <= s[2] && k <= s[3],
          "adaptive_avg_pool: k=" + std::to_string(k) + " exceeds map " + std::to_string(s[2]) + "x" + std::to_string(s[3]));
  const int planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor out({s[0], s[1], k, k});
  kernels::adaptive_avg_pool_forward<float>(x.value().data(), planes, h, w, k, k, out.data());
  return ag::record(std::move(out), {x}, [planes, h, w, k](Node& n) {
    Span g = in_grad(n, 0);
    if (!g.empty()) kernels::adaptive_avg_pool_backward<float>(n.grad.data(), planes, h, w, k, k, g);
  });
}

Var to_tokens(const Var& x) {
  require_rank(x, 4, "to_tokens");
  const auto& s = x.shape();
  const int N = s[0], C = s[1], t = s[2] * s[3];
  Tensor out({N, t, C});
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < t; ++j)
        out[(static_cast<std::size_t>(i) * t + j) * C + c] = x.value()[(static_cast<std::size_t>(i) * C + c) * t + j];
  return ag::record(std::move(out), {x}, [N, C, t](Node& n) {
    Span g = in_grad(n, 0);
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c)
        for (int j = 0; j < t; ++j)
          g[(static_cast<std::size_t>(i) * C + c) * t + j] += n.grad[(static_cast<std::size_t>(i) * t + j) * C + c];
  });
}

Var mean_tokens(const Var& tokens) {
  require_rank(tokens, 3, "mean_tokens");
  const int N = tokens.shape()[0], t = tokens.shape()[1], C = tokens.shape()[2];
  Tensor out({N, C});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < t; ++j)
      for (int c = 0; c < C; ++c)
        out[static_cast<std::size_t>(i) * C + c] += tokens.value()[(static_cast<std::size_t>(i) * t + j) * C + c] / t;
  return ag::record(std::move(out), {tokens}, [N, t, C](Node& n) {
    Span g = in_grad(n, 0);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < t; ++j)
        for (int c = 0; c < C; ++c)
          g[(static_cast<std::size_t>(i) * t + j) * C + c] += n.grad[static_cast<std::size_t>(i) * C + c] / t;
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank(x, 4, "resize_bilinear");
  require(out_h > 0 && out_w > 0, "resize_bilinear: target size must be positive");
  const auto& s = x.shape();
  const int planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor out({s[0], s[1], out_h, out_w});
  kernels::bilinear_resize_forward<float>(x.value().data(), planes, h, w, out_h, out_w, out.data());
  return ag::record(std::move(out), {x}, [planes, h, w, out_h, out_w](Node& n) {
    Span g = in_grad(n, 0);
    if (!g.empty()) kernels::bilinear_resize_backward<float>(n.grad.data(), planes, h, w, out_h, out_w, g);
  });
}

Var tile_split(const Var& x, int g) {
  require_rank(x, 4, "tile_split");
  const auto& s = x.shape();
  require(g >= 1 && s[2] % g == 0 && s[3] % g == 0,
          "decompose: grid " + std::to_string(g) + " does not divide " + std::to_string(s[2]) + "x" + std::to_string(s[3]));
  const int N = s[0], C = s[1], h = s[2] / g, w = s[3] / g;
  if (g == 1) return x;
  Tensor out({N * g * g, C, h, w});
  kernels::tile_permute<float>(x.value().data(), N, C, g, h, w, true, out.data());
  return ag::record(std::move(out), {x}, [N, C, g, h, w](Node& n) {
    Span gx = in_grad(n, 0);
    if (gx.empty()) return;
    std::vector<float> tmp(gx.size());
    kernels::tile_permute<float>(n.grad.data(), N, C, g, h, w, false, std::span<float>(tmp));
    for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
  });
}

Var tile_merge(const Var& x, int g) {
  require_rank(x, 4, "tile_merge");
  const auto& s = x.shape();
  require(g >= 1 && s[0] % (g * g) == 0, "reassemble: batch is not a multiple of g*g");
  if (g == 1) return x;
  const int N = s[0] / (g * g), C = s[1], h = s[2], w = s[3];
  Tensor out({N, C, g * h, g * w});
  kernels::tile_permute<float>(x.value().data(), N, C, g, h, w, false, out.data());
  return ag::record(std::move(out), {x}, [N, C, g, h, w](Node& n) {
    Span gx = in_grad(n, 0);
    if (gx.empty()) return;
    std::vector<float> tmp(gx.size());
    kernels::tile_permute<float>(n.grad.data(), N, C, g, h, w, true, std::span<float>(tmp));
    for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  const int rows = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  require(weight.shape()[1] == in, "linear: input width " + std::to_string(in) + " vs weight " + shape_str(weight.shape()));
  Tensor out({rows, out_dim});
  CSpan b = bias.defined() ? bias.value().data() : CSpan{};
  kernels::linear_forward<float>(x.value().data(), rows, in, out_dim, weight.value().data(), b, out.data());
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return ag::record(std::move(out), std::move(inputs), [rows, in, out_dim, has_bias](Node& n) {
    kernels::linear_backward<float>(in_value(n, 0), rows, in, out_dim, in_value(n, 1), n.grad.data(), in_grad(n, 0),
                                    n.inputs[1]->grad_buffer().data(), has_bias ? in_grad(n, 2) : Span{});
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  require_rank(x, 2, "layer_norm");
  const int rows = x.shape()[0], d = x.shape()[1];
  Tensor out(x.shape());
  kernels::layer_norm_forward<float>(x.value().data(), rows, d, gamma.value().data(), beta.value().data(), eps,
                                     out.data());
  return ag::record(std::move(out), {x, gamma, beta}, [rows, d, eps](Node& n) {
    kernels::layer_norm_backward<float>(in_value(n, 0), rows, d, in_value(n, 1), eps, n.grad.data(), in_grad(n, 0),
                                        n.inputs[1]->grad_buffer().data(), n.inputs[2]->grad_buffer().data());
  });
}

Var cross_attention(const Var& q, const Var& keys, const Var& values, const Var& wq, const Var& wk,
                    const Var& wv, const Var& wo, int heads, std::vector<float>* weights) {
  require_rank(q, 2, "cross_attention query");
  require_rank(keys, 3, "cross_attention keys");
  require(keys.shape() == values.shape(), "cross_attention: keys and values differ in shape");
  kernels::AttentionShape s{q.shape()[0], keys.shape()[1], q.shape()[1], heads};
  require(keys.shape()[0] == s.batch && keys.shape()[2] == s.dim, "cross_attention: token batch/width mismatch");
  require(s.tokens >= 1, "cross_attention: need at least one token");
  require(heads >= 1 && s.dim % heads == 0, "cross_attention: heads must divide d");
  Tensor out({s.batch, s.dim});
  auto cache = std::make_shared<kernels::AttentionCache<float>>();
  kernels::attention_forward<float>(q.value().data(), keys.value().data(), values.value().data(), wq.value().data(),
                                    wk.value().data(), wv.value().data(), wo.value().data(), s, out.data(), *cache);
  if (weights) *weights = cache->weights;
  return ag::record(std::move(out), {q, keys, values, wq, wk, wv, wo}, [s, cache](Node& n) {
    kernels::attention_backward<float>(in_value(n, 0), in_value(n, 1), in_value(n, 2), in_value(n, 3), in_value(n, 4),
                                       in_value(n, 5), in_value(n, 6), s, *cache, n.grad.data(), in_grad(n, 0),
                                       in_grad(n, 1), in_grad(n, 2), in_grad(n, 3), in_grad(n, 4), in_grad(n, 5),
                                       in_grad(n, 6));
  });
}

Var fuse_levels(const std::vector<Var>& maps, const Var& alphas) {
  require(!maps.empty(), "fuse_levels: no maps");
  require(alphas.value().numel() == maps.size(), "fuse_levels: " + std::to_string(maps.size()) + " maps but " +
                                                      std::to_string(alphas.value().numel()) + " weights");
  std::vector<CSpan> spans;
  for (const auto& m : maps) {
    require(m.shape() == maps[0].shape(), "fuse_levels: map shapes differ");
    spans.push_back(m.value().data());
  }
  Tensor out(maps[0].shape());
  kernels::fuse_levels_forward<float>(spans, alphas.value().data(), out.data());
  std::vector<Var> inputs = maps;
  inputs.push_back(alphas);
  const std::size_t L = maps.size();
  return ag::record(std::move(out), std::move(inputs), [L](Node& n) {
    std::vector<CSpan> vals;
    std::vector<Span> grads;
    for (std::size_t s = 0; s < L; ++s) {
      vals.push_back(in_value(n, s));
      grads.push_back(in_grad(n, s));
    }
    Span ga = in_grad(n, L);
    std::vector<float> scratch;
    if (ga.empty()) {
      scratch.assign(L, 0.0f);
      ga = scratch;
    }
    kernels::fuse_levels_backward<float>(vals, in_value(n, L), n.grad.data(), grads, ga);
  });
}

Var alignment_loss(const std::vector<Var>& maps, Reduction reduction) {
  require(!maps.empty(), "alignment_loss: Level-0 map required");
  std::vector<CSpan> spans;
  for (const auto& m : maps) {
    require(m.shape() == maps[0].shape(), "alignment_loss: map shapes differ (" + shape_str(m.shape()) + " vs " +
                                              shape_str(maps[0].shape()) + ")");
    spans.push_back(m.value().data());
  }
  const int batch = maps[0].shape()[0];
  Tensor out({1});
  out[0] = kernels::alignment_loss_forward<float>(spans, batch, reduction);
  const std::size_t L = maps.size();
  return ag::record(std::move(out), maps, [L, batch, reduction](Node& n) {
    std::vector<CSpan> vals;
    std::vector<Span> grads;
    for (std::size_t s = 0; s < L; ++s) {
      vals.push_back(in_value(n, s));
      grads.push_back(in_grad(n, s));
    }
    kernels::alignment_loss_backward<float>(vals, batch, reduction, n.grad[0], grads);
  });
}

Var mean_sq_norm(const Var& pred, const Tensor& target) {
  require(pred.shape() == target.shape(), "loss: prediction " + shape_str(pred.shape()) + " vs target " +
                                              shape_str(target.shape()));
  const int rows = pred.shape()[0];
  Tensor out({1});
  out[0] = kernels::mean_sq_norm<float>(pred.value().data(), target.data(), rows);
  auto tgt = std::make_shared<Tensor>(target);
  return ag::record(std::move(out), {pred}, [rows, tgt](Node& n) {
    kernels::mean_sq_norm_backward<float>(in_value(n, 0), tgt->data(), rows, n.grad[0], in_grad(n, 0));
  });
}

}  // namespace hifusion::ops
