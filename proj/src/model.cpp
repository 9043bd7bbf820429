#include "hifusion/model.hpp"

#include <cmath>

#include "hifusion/error.hpp"
#include "hifusion/kernels/fusion.hpp"
#include "hifusion/ops.hpp"

namespace hifusion {

namespace ccf {

ag::Var region_query(const ag::Var& region_map) { return ops::global_avg_pool(region_map); }

ag::Var tokens_from_fused(const ag::Var& fused, int k) {
  require(fused.value().rank() == 4, "tokens_from_fused: expected [N, d, h, w]");
  const int h = fused.shape()[2], w = fused.shape()[3];
  require(k >= 1 && k <= h && k <= w,
          "token grid k=" + std::to_string(k) + " exceeds the " + std::to_string(h) + "x" + std::to_string(w) +
              " feature map");
  return ops::to_tokens(ops::adaptive_avg_pool(fused, k));
}

}  // namespace ccf

HiFusionModel::HiFusionModel(const ModelConfig& config, int genes, std::uint64_t seed)
    : config_(config), genes_(genes), seed_(seed) {
  require(genes >= 1, "model needs at least one output gene");
  Config probe;
  probe.model = config_;
  probe.validate();
  nn::Rng rng(seed);
  const int d = config_.width;
  spot_encoder_ = std::make_unique<ResNetEncoder>("spot_encoder", config_.spot_encoder(), rng);
  if (config_.use_region()) {
    region_encoder_ = std::make_unique<ResNetEncoder>("region_encoder", config_.region_encoder(), rng);
    if (config_.region_width != d) {
      has_projection_ = true;
      region_projection_ = nn::Conv2d("region_proj", config_.region_width, d, 1, 1, 0, true, rng);
    }
  }
  alphas_ = ag::Var::parameter(Tensor({static_cast<int>(config_.levels.size())}, 0.0f), "fusion.alphas");
  const float bound = 1.0f / std::sqrt(static_cast<float>(d));
  wq_ = ag::Var::parameter(nn::uniform({d, d}, bound, rng), "attn.wq");
  wk_ = ag::Var::parameter(nn::uniform({d, d}, bound, rng), "attn.wk");
  wv_ = ag::Var::parameter(nn::uniform({d, d}, bound, rng), "attn.wv");
  wo_ = ag::Var::parameter(nn::uniform({d, d}, bound, rng), "attn.wo");
  head_norm_ = nn::LayerNorm("head.norm", d, static_cast<float>(config_.ln_eps));
  head_fc_ = nn::Linear("head.fc", d, genes, rng);
  aux_head_ = nn::Linear("aux_head", d, genes, rng);
}

ModelOutput HiFusionModel::forward(const ag::Var& spots, const ag::Var& neighbors, bool training) {
  require(spots.defined() && spots.value().rank() == 4 && spots.shape()[2] == config_.spot_size,
          "spot batch must be [N, 3, " + std::to_string(config_.spot_size) + ", " +
              std::to_string(config_.spot_size) + "]");
  const QkReversed qk = config_.qk_mode();
  const bool region = config_.use_region();
  if (region || qk == QkReversed::kInput) {
    require(neighbors.defined() && neighbors.value().rank() == 4 &&
                neighbors.shape()[2] == config_.neighbor_size() && neighbors.shape()[0] == spots.shape()[0],
            "neighbor batch must be [N, 3, " + std::to_string(config_.neighbor_size()) + ", " +
                std::to_string(config_.neighbor_size()) + "]");
  }

  const ag::Var& hism_input = qk == QkReversed::kInput ? neighbors : spots;
  hism::HismOutput h =
      hism::hism_forward(hism_input, *spot_encoder_, config_.level_spec(), config_.reduction(), training);

  ModelOutput out;
  out.align_loss = h.align_loss;
  for (const auto& m : h.maps) out.aux.push_back(aux_head_(ops::global_avg_pool(m)));
  ag::Var fused = ops::fuse_levels(h.maps, alphas_);

  ag::Var joint;
  if (!region) {
    joint = ops::global_avg_pool(fused);
  } else {
    const ag::Var& region_input = qk == QkReversed::kInput ? spots : neighbors;
    ag::Var region_map = region_encoder_->forward(region_input, training);
    if (has_projection_) region_map = region_projection_(region_map);
    ag::Var query, tokens;
    if (qk == QkReversed::kCcf) {
      query = ops::global_avg_pool(fused);
      tokens = ccf::tokens_from_fused(region_map, config_.k);
    } else {
      query = ccf::region_query(region_map);
      tokens = ccf::tokens_from_fused(fused, config_.k);
    }
    ag::Var context;
    if (config_.fusion_mode() == FusionMode::kAdditive)
      context = ops::mean_tokens(tokens);
    else
      context = ops::cross_attention(query, tokens, tokens, wq_, wk_, wv_, wo_, config_.heads, &out.attention);
    joint = ops::add(query, context);
  }
  out.prediction = head_fc_(head_norm_(joint));
  return out;
}

Tensor HiFusionModel::predict(const Tensor& spots, const Tensor& neighbors, int chunk) {
  ag::NoGradGuard guard;
  const int n = spots.dim(0);
  Tensor out({n, genes_});
  auto slice = [](const Tensor& t, int b, int e) {
    if (t.empty()) return Tensor();
    const std::size_t per = t.numel() / t.dim(0);
    Shape s = t.shape();
    s[0] = e - b;
    return Tensor(s, std::vector<float>(t.storage().begin() + b * per, t.storage().begin() + e * per));
  };
  for (int b = 0; b < n; b += chunk) {
    const int e = std::min(n, b + chunk);
    Tensor nb = slice(neighbors, b, e);
    ModelOutput o = forward(ag::Var::constant(slice(spots, b, e)),
                            nb.empty() ? ag::Var() : ag::Var::constant(std::move(nb)), false);
    std::copy(o.prediction.value().storage().begin(), o.prediction.value().storage().end(),
              out.storage().begin() + static_cast<std::size_t>(b) * genes_);
  }
  return out;
}

nn::StateRefs HiFusionModel::state() {
  nn::StateRefs refs;
  spot_encoder_->collect(refs);
  if (region_encoder_) region_encoder_->collect(refs);
  if (has_projection_) region_projection_.collect(refs);
  refs.params.push_back({alphas_.name(), alphas_, false});
  const bool attention = config_.use_region() && config_.fusion_mode() == FusionMode::kAttention;
  if (attention) {
    for (const auto* w : {&wq_, &wk_, &wv_, &wo_}) refs.params.push_back({w->name(), *w, true});
  }
  head_norm_.collect(refs);
  head_fc_.collect(refs);
  aux_head_.collect(refs);
  return refs;
}

std::vector<double> HiFusionModel::fusion_weights() const {
  std::vector<double> a(alphas_.value().data().begin(), alphas_.value().data().end());
  return kernels::softmax<double>(a);
}

std::string HiFusionModel::architecture_id() const {
  std::string id = "hifusion-" + spot_encoder_->config().architecture_id();
  if (region_encoder_) id += "+" + region_encoder_->config().architecture_id();
  return id;
}

}  // namespace hifusion
