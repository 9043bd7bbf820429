#include <gtest/gtest.h>

#include "hifusion/encoders.hpp"
#include "hifusion/error.hpp"
#include "hifusion/ops.hpp"

using namespace hifusion;

namespace {

// Stem conv and max-pool halve (rounding up), then each stage divides by its stride.
int expected_size(int s, int total_stride) {
  auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
  s = ceil_div(ceil_div(s, 2), 2);
  return ceil_div(s, total_stride / 4);
}

std::size_t param_count(ResNetEncoder& enc) {
  nn::StateRefs refs;
  enc.collect(refs);
  std::size_t n = 0;
  for (const auto& p : refs.params) n += p.var.value().numel();
  return n;
}

Tensor random_images(int n, int size, std::uint64_t seed) {
  nn::Rng rng(seed);
  return nn::uniform({n, 3, size, size}, 1.0f, rng);
}

}  // namespace

class EncoderShape : public ::testing::TestWithParam<std::tuple<int, int, int>> {};

TEST_P(EncoderShape, MatchesStrideArithmetic) {
  const auto [depth, stride, size] = GetParam();
  const EncoderConfig cfg{depth, 16, stride};
  nn::Rng rng(1);
  ResNetEncoder enc("enc", cfg, rng);
  ag::NoGradGuard guard;
  const Tensor y = enc.forward(ag::Var::constant(random_images(2, size, 2)), false).value();
  const int e = expected_size(size, stride);
  EXPECT_EQ(y.shape(), (Shape{2, 16, e, e}));
  EXPECT_EQ(encoder_output_size(cfg, size), e);
}

INSTANTIATE_TEST_SUITE_P(Sizes, EncoderShape,
                         ::testing::Combine(::testing::Values(18, 10), ::testing::Values(4, 8, 16, 32),
                                            ::testing::Values(32, 56, 112, 224, 448)));

TEST(Encoder, FullSizesAtStride32) {
  const EncoderConfig cfg{18, 512, 32};
  EXPECT_EQ(encoder_output_size(cfg, 224), 7);
  EXPECT_EQ(encoder_output_size(cfg, 112), 4);
  EXPECT_EQ(encoder_output_size(cfg, 32), 1);
  EXPECT_EQ(encoder_output_size(cfg, 448), 14);
  EXPECT_EQ(cfg.stage_strides(), (std::vector<int>{1, 2, 2, 2}));
  EXPECT_EQ(cfg.blocks_per_stage(), (std::vector<int>{2, 2, 2, 2}));
  EXPECT_EQ((EncoderConfig{10, 512, 8}.stage_strides()), (std::vector<int>{1, 2, 1, 1}));
  EXPECT_EQ((EncoderConfig{10, 512, 16}.blocks_per_stage()), (std::vector<int>{1, 1, 1, 1}));
}

TEST(Encoder, ResNet18ParameterCount) {
  // torchvision resnet18 without its 1000-way classifier
  nn::Rng rng(0);
  ResNetEncoder enc("enc", {18, 512, 32}, rng);
  EXPECT_EQ(param_count(enc), 11176512u);
}

TEST(Encoder, RejectsBadConfig) {
  nn::Rng rng(0);
  EXPECT_THROW(ResNetEncoder("e", EncoderConfig{18, 512, 12}, rng), InvalidInput);
  EXPECT_THROW(ResNetEncoder("e", EncoderConfig{34, 512, 32}, rng), InvalidInput);
  EXPECT_THROW(ResNetEncoder("e", EncoderConfig{18, 12, 32}, rng), InvalidInput);
}

TEST(Encoder, SameSeedSameWeightsAndOutputs) {
  nn::Rng r1(5), r2(5);
  ResNetEncoder a("enc", {18, 16, 8}, r1), b("enc", {18, 16, 8}, r2);
  ag::NoGradGuard guard;
  const Tensor x = random_images(3, 56, 9);
  EXPECT_EQ(a.forward(ag::Var::constant(x), false).value().storage(),
            b.forward(ag::Var::constant(x), false).value().storage());
  nn::Rng r3(6);
  ResNetEncoder c("enc", {18, 16, 8}, r3);
  EXPECT_NE(a.forward(ag::Var::constant(x), false).value().storage(),
            c.forward(ag::Var::constant(x), false).value().storage());
}

TEST(Encoder, EvalModeIsBatchIndependent) {
  nn::Rng rng(2);
  ResNetEncoder enc("enc", {10, 16, 8}, rng);
  const Tensor x = random_images(3, 56, 4);
  ag::NoGradGuard guard;
  const Tensor all = enc.forward(ag::Var::constant(x), false).value();
  const Image second = from_chw(x, 1);
  const FeatureMap one = enc.encode(second);
  const std::size_t per = one.tensor().numel();
  ASSERT_EQ(all.numel(), 3 * per);
  for (std::size_t i = 0; i < per; ++i) EXPECT_NEAR(one.tensor()[i], all[per + i], 1e-5f);
}

TEST(Encoder, CountsCallsAndImages) {
  nn::Rng rng(2);
  ResNetEncoder enc("enc", {10, 16, 8}, rng);
  ag::NoGradGuard guard;
  enc.forward(ag::Var::constant(random_images(4, 32, 1)), false);
  enc.forward(ag::Var::constant(random_images(2, 32, 1)), false);
  EXPECT_EQ(enc.calls(), 2);
  EXPECT_EQ(enc.images(), 6);
}

TEST(Encoder, GradientsReachEveryParameter) {
  nn::Rng rng(3);
  ResNetEncoder enc("enc", {10, 16, 8}, rng);
  const ag::Var y = enc.forward(ag::Var::constant(random_images(2, 32, 1)), true);
  const ag::Var loss = ops::global_avg_pool(y);
  ag::backward(ops::mean_sq_norm(loss, Tensor(loss.shape(), 0.0f)));
  nn::StateRefs refs;
  enc.collect(refs);
  int touched = 0;
  for (const auto& p : refs.params) {
    const auto& g = p.var.grad();
    bool nonzero = false;
    for (std::size_t i = 0; i < g.numel(); ++i) nonzero = nonzero || g[i] != 0.0f;
    touched += nonzero;
  }
  EXPECT_EQ(touched, static_cast<int>(refs.params.size()));
}
