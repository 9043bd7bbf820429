#pragma once

#include <string>
#include <vector>

#include "hifusion/image.hpp"
#include "hifusion/nn.hpp"

namespace hifusion {

// d x h x w feature grid for one image.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int channels, int height, int width, float fill = 0.0f)
      : data_({channels, height, width}, fill) {}
  explicit FeatureMap(Tensor chw);

  int channels() const { return data_.dim(0); }
  int height() const { return data_.dim(1); }
  int width() const { return data_.dim(2); }
  float& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height() + y) * width() + x]; }
  float at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height() + y) * width() + x]; }
  const Tensor& tensor() const { return data_; }
  Tensor& tensor() { return data_; }

 private:
  Tensor data_;
};

// Residual backbone layout. depth 18 = four stages of two basic blocks,
// depth 10 = four stages of one. The stem is a stride-2 7x7 conv and a
// stride-2 3x3 max-pool; `stride` (4, 8, 16 or 32) decides how many of the
// later stages downsample: 32 -> [1,2,2,2], 16 -> [1,2,2,1], 8 -> [1,2,1,1],
// 4 -> [1,1,1,1]. Stage widths are d/8, d/4, d/2, d.
struct EncoderConfig {
  int depth = 18;
  int width = 512;
  int stride = 32;

  std::vector<int> stage_strides() const;
  std::vector<int> blocks_per_stage() const;
  std::string architecture_id() const;
  void validate() const;
};

// Output spatial size for a square input, from the stage arithmetic alone.
int encoder_output_size(const EncoderConfig& config, int input_size);

class ResNetEncoder {
 public:
  ResNetEncoder(const std::string& name, const EncoderConfig& config, nn::Rng& rng);
  ResNetEncoder(const ResNetEncoder&) = delete;
  ResNetEncoder& operator=(const ResNetEncoder&) = delete;

  // x [N, 3, S, S] -> [N, d, h, w]; the final residual stage, before pooling.
  ag::Var forward(const ag::Var& x, bool training);

  // Single-image inference (no grad, running statistics).
  FeatureMap encode(const Image& image);

  void collect(nn::StateRefs& refs);
  const EncoderConfig& config() const { return config_; }
  int out_channels() const { return config_.width; }

  // Instrumentation: forward calls and total images seen since construction.
  long calls() const { return calls_; }
  long images() const { return images_; }

 private:
  struct Block {
    nn::Conv2d conv1, conv2;
    nn::BatchNorm2d bn1, bn2;
    bool has_down = false;
    nn::Conv2d down;
    nn::BatchNorm2d down_bn;
  };

  EncoderConfig config_;
  nn::Conv2d stem_;
  nn::BatchNorm2d stem_bn_;
  std::vector<Block> blocks_;
  long calls_ = 0;
  long images_ = 0;
};

}  // namespace hifusion
