#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hifusion/config.hpp"
#include "hifusion/encoders.hpp"
#include "hifusion/hism.hpp"
#include "hifusion/nn.hpp"

namespace hifusion {

namespace ccf {

// [N, d, h, w] -> [N, d]
ag::Var region_query(const ag::Var& region_map);

// Adaptive k x k average pool, row-major tokens: [N, d, h, w] -> [N, k*k, d].
ag::Var tokens_from_fused(const ag::Var& fused, int k);

}  // namespace ccf

struct ModelOutput {
  ag::Var prediction;            // [N, m]
  std::vector<ag::Var> aux;      // one [N, m] per level
  ag::Var align_loss;            // scalar
  std::vector<float> attention;  // [N, heads, t], empty unless attention ran
};

class HiFusionModel {
 public:
  HiFusionModel(const ModelConfig& config, int genes, std::uint64_t seed);
  HiFusionModel(const HiFusionModel&) = delete;
  HiFusionModel& operator=(const HiFusionModel&) = delete;

  // spots [N, 3, S, S], neighbors [N, 3, S*N, S*N].
  ModelOutput forward(const ag::Var& spots, const ag::Var& neighbors, bool training);

  // Eval-mode prediction [N, m], processed in chunks.
  Tensor predict(const Tensor& spots, const Tensor& neighbors, int chunk = 32);

  // Parameters and buffers in a fixed order; names are stable across runs.
  nn::StateRefs state();

  const ModelConfig& config() const { return config_; }
  int genes() const { return genes_; }
  std::uint64_t seed() const { return seed_; }
  ResNetEncoder& spot_encoder() { return *spot_encoder_; }
  ResNetEncoder* region_encoder() { return region_encoder_.get(); }
  const ag::Var& alphas() const { return alphas_; }
  std::vector<double> fusion_weights() const;
  std::string architecture_id() const;

 private:
  ModelConfig config_;
  int genes_;
  std::uint64_t seed_;
  std::unique_ptr<ResNetEncoder> spot_encoder_;
  std::unique_ptr<ResNetEncoder> region_encoder_;
  bool has_projection_ = false;
  nn::Conv2d region_projection_;
  ag::Var alphas_;
  ag::Var wq_, wk_, wv_, wo_;
  nn::LayerNorm head_norm_;
  nn::Linear head_fc_;
  nn::Linear aux_head_;
};

}  // namespace hifusion
