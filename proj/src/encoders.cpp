#include "hifusion/encoders.hpp"

#include "hifusion/error.hpp"
#include "hifusion/kernels/conv.hpp"

namespace hifusion {

FeatureMap::FeatureMap(Tensor chw) : data_(std::move(chw)) {
  require(data_.rank() == 3, "FeatureMap needs a [d, h, w] tensor, got " + shape_str(data_.shape()));
}

std::vector<int> EncoderConfig::stage_strides() const {
  switch (stride) {
    case 32: return {1, 2, 2, 2};
    case 16: return {1, 2, 2, 1};
    case 8: return {1, 2, 1, 1};
    case 4: return {1, 1, 1, 1};
    default: throw InvalidInput("encoder stride must be 4, 8, 16 or 32, got " + std::to_string(stride));
  }
}

std::vector<int> EncoderConfig::blocks_per_stage() const {
  switch (depth) {
    case 18: return {2, 2, 2, 2};
    case 10: return {1, 1, 1, 1};
    default: throw InvalidInput("encoder depth must be 10 or 18, got " + std::to_string(depth));
  }
}

std::string EncoderConfig::architecture_id() const {
  return "resnet" + std::to_string(depth) + "-d" + std::to_string(width) + "-s" + std::to_string(stride);
}

void EncoderConfig::validate() const {
  stage_strides();
  blocks_per_stage();
  require(width >= 8 && width % 8 == 0, "encoder width must be a positive multiple of 8, got " + std::to_string(width));
}

int encoder_output_size(const EncoderConfig& config, int input_size) {
  int s = kernels::conv_out_size(input_size, 7, 2, 3);
  s = kernels::conv_out_size(s, 3, 2, 1);
  for (int stride : config.stage_strides()) s = kernels::conv_out_size(s, 3, stride, 1);
  return s;
}

ResNetEncoder::ResNetEncoder(const std::string& name, const EncoderConfig& config, nn::Rng& rng)
    : config_(config) {
  config_.validate();
  const int base = config_.width / 8;
  stem_ = nn::Conv2d(name + ".stem.conv", 3, base, 7, 2, 3, false, rng);
  stem_bn_ = nn::BatchNorm2d(name + ".stem.bn", base);
  const auto strides = config_.stage_strides();
  const auto counts = config_.blocks_per_stage();
  int in = base;
  for (int stage = 0; stage < 4; ++stage) {
    const int out = base << stage;
    for (int b = 0; b < counts[stage]; ++b) {
      const int stride = b == 0 ? strides[stage] : 1;
      const std::string p = name + ".layer" + std::to_string(stage + 1) + "." + std::to_string(b);
      Block blk;
      blk.conv1 = nn::Conv2d(p + ".conv1", in, out, 3, stride, 1, false, rng);
      blk.bn1 = nn::BatchNorm2d(p + ".bn1", out);
      blk.conv2 = nn::Conv2d(p + ".conv2", out, out, 3, 1, 1, false, rng);
      blk.bn2 = nn::BatchNorm2d(p + ".bn2", out);
      if (stride != 1 || in != out) {
        blk.has_down = true;
        blk.down = nn::Conv2d(p + ".downsample.conv", in, out, 1, stride, 0, false, rng);
        blk.down_bn = nn::BatchNorm2d(p + ".downsample.bn", out);
      }
      blocks_.push_back(std::move(blk));
      in = out;
    }
  }
}

ag::Var ResNetEncoder::forward(const ag::Var& x, bool training) {
  require(x.defined() && x.value().rank() == 4, "encoder expects an [N, 3, S, S] batch");
  const auto& s = x.shape();
  require(s[1] == 3, "encoder expects 3 channels, got " + std::to_string(s[1]));
  require(s[2] == s[3], "encoder expects square inputs, got " + std::to_string(s[2]) + "x" + std::to_string(s[3]));
  ++calls_;
  images_ += s[0];
  ag::Var h = ops::relu(stem_bn_(stem_(x), training));
  h = ops::max_pool(h, 3, 2, 1);
  for (auto& blk : blocks_) {
    ag::Var y = ops::relu(blk.bn1(blk.conv1(h), training));
    y = blk.bn2(blk.conv2(y), training);
    ag::Var shortcut = blk.has_down ? blk.down_bn(blk.down(h), training) : h;
    h = ops::relu(ops::add(y, shortcut));
  }
  return h;
}

FeatureMap ResNetEncoder::encode(const Image& image) {
  ag::NoGradGuard guard;
  const Image one[] = {image};
  ag::Var out = forward(ag::Var::constant(to_batch(one)), false);
  const auto& s = out.shape();
  return FeatureMap(out.value().reshaped({s[1], s[2], s[3]}));
}

void ResNetEncoder::collect(nn::StateRefs& refs) {
  stem_.collect(refs);
  stem_bn_.collect(refs);
  for (auto& blk : blocks_) {
    blk.conv1.collect(refs);
    blk.bn1.collect(refs);
    blk.conv2.collect(refs);
    blk.bn2.collect(refs);
    if (blk.has_down) {
      blk.down.collect(refs);
      blk.down_bn.collect(refs);
    }
  }
}

}  // namespace hifusion
