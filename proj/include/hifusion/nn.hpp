#pragma once

#include <random>
#include <string>
#include <vector>

#include "hifusion/autograd.hpp"
#include "hifusion/ops.hpp"

namespace hifusion::nn {

using ag::Var;
using Rng = std::mt19937_64;

// A trainable tensor plus whether weight decay applies to it.
struct Parameter {
  std::string name;
  Var var;
  bool decay = true;
};

// Non-trainable persistent state (batch-norm running statistics).
struct Buffer {
  std::string name;
  Tensor* tensor = nullptr;
};

struct StateRefs {
  std::vector<Parameter> params;
  std::vector<Buffer> buffers;
};

Tensor kaiming_normal_fan_out(const Shape& shape, int fan_out, Rng& rng);
Tensor uniform(const Shape& shape, float bound, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int k, int stride, int pad, bool bias, Rng& rng);
  Var operator()(const Var& x) const;
  void collect(StateRefs& refs) const;
  const Var& weight() const { return weight_; }
  int stride() const { return stride_; }

 private:
  Var weight_, bias_;
  int stride_ = 1, pad_ = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);
  Var operator()(const Var& x, bool training);
  void collect(StateRefs& refs);

 private:
  std::string name_;
  Var gamma_, beta_;
  ops::BatchNormState state_;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng);
  Var operator()(const Var& x) const;
  void collect(StateRefs& refs) const;
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_, bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim, float eps = 1e-5f);
  Var operator()(const Var& x) const;
  void collect(StateRefs& refs) const;

 private:
  Var gamma_, beta_;
  float eps_ = 1e-5f;
};

}  // namespace hifusion::nn
