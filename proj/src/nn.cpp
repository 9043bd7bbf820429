#include "hifusion/nn.hpp"

#include <cmath>

namespace hifusion::nn {

Tensor kaiming_normal_fan_out(const Shape& shape, int fan_out, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_out)));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor uniform(const Shape& shape, float bound, Rng& rng) {
  Tensor t(shape);
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Conv2d::Conv2d(const std::string& name, int in, int out, int k, int stride, int pad, bool bias, Rng& rng)
    : stride_(stride), pad_(pad) {
  weight_ = Var::parameter(kaiming_normal_fan_out({out, in, k, k}, out * k * k, rng), name + ".weight");
  if (bias) bias_ = Var::parameter(Tensor({out}, 0.0f), name + ".bias");
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight_, bias_, stride_, pad_); }

void Conv2d::collect(StateRefs& refs) const {
  refs.params.push_back({weight_.name(), weight_, true});
  if (bias_.defined()) refs.params.push_back({bias_.name(), bias_, false});
}

BatchNorm2d::BatchNorm2d(const std::string& name, int channels) : name_(name) {
  gamma_ = Var::parameter(Tensor({channels}, 1.0f), name + ".weight");
  beta_ = Var::parameter(Tensor({channels}, 0.0f), name + ".bias");
  state_.running_mean = Tensor({channels}, 0.0f);
  state_.running_var = Tensor({channels}, 1.0f);
}

Var BatchNorm2d::operator()(const Var& x, bool training) {
  return ops::batch_norm(x, gamma_, beta_, state_, training);
}

void BatchNorm2d::collect(StateRefs& refs) {
  refs.params.push_back({gamma_.name(), gamma_, false});
  refs.params.push_back({beta_.name(), beta_, false});
  refs.buffers.push_back({name_ + ".running_mean", &state_.running_mean});
  refs.buffers.push_back({name_ + ".running_var", &state_.running_var});
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  weight_ = Var::parameter(uniform({out, in}, bound, rng), name + ".weight");
  bias_ = Var::parameter(Tensor({out}, 0.0f), name + ".bias");
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight_, bias_); }

void Linear::collect(StateRefs& refs) const {
  refs.params.push_back({weight_.name(), weight_, true});
  refs.params.push_back({bias_.name(), bias_, false});
}

LayerNorm::LayerNorm(const std::string& name, int dim, float eps) : eps_(eps) {
  gamma_ = Var::parameter(Tensor({dim}, 1.0f), name + ".weight");
  beta_ = Var::parameter(Tensor({dim}, 0.0f), name + ".bias");
}

Var LayerNorm::operator()(const Var& x) const { return ops::layer_norm(x, gamma_, beta_, eps_); }

void LayerNorm::collect(StateRefs& refs) const {
  refs.params.push_back({gamma_.name(), gamma_, false});
  refs.params.push_back({beta_.name(), beta_, false});
}

}  // namespace hifusion::nn
