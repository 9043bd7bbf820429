#include "hifusion/hism.hpp"

#include <algorithm>
#include <set>

#include "hifusion/error.hpp"
#include "hifusion/kernels/spatial.hpp"
#include "hifusion/ops.hpp"

namespace hifusion::hism {

void LevelSpec::validate(int spot_size) const {
  require(!grids.empty() && grids.front() == 1, "levels must start with 1 (the whole spot)");
  std::set<int> seen;
  for (int g : grids) {
    require(g == 1 || g == 2 || g == 4 || g == 7, "level grid must be one of 1, 2, 4, 7; got " + std::to_string(g));
    require(seen.insert(g).second, "duplicate level " + std::to_string(g));
    require(spot_size % g == 0,
            "spot size " + std::to_string(spot_size) + " is not divisible by level grid " + std::to_string(g));
  }
  require(std::is_sorted(grids.begin(), grids.end()), "levels must be listed in increasing order");
}

std::string LevelSpec::label() const {
  std::string out;
  for (int g : grids) {
    if (!out.empty()) out += " + ";
    out += std::to_string(g) + "x" + std::to_string(g);
  }
  return out;
}

std::vector<Image> decompose(const Image& image, int g) {
  require(g >= 1 && image.height % g == 0 && image.width % g == 0,
          "decompose: grid " + std::to_string(g) + " does not divide " + std::to_string(image.height) + "x" +
              std::to_string(image.width));
  const int ph = image.height / g, pw = image.width / g;
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(g) * g);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      Image p(ph, pw);
      for (int y = 0; y < ph; ++y) {
        const float* src = &image.pixels[(static_cast<std::size_t>(r * ph + y) * image.width + c * pw) * 3];
        std::copy_n(src, static_cast<std::size_t>(pw) * 3, &p.pixels[static_cast<std::size_t>(y) * pw * 3]);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

Image reassemble_pixels(std::span<const Image> patches, int g) {
  require(g >= 1 && patches.size() == static_cast<std::size_t>(g) * g, "reassemble: need g*g patches");
  const int ph = patches[0].height, pw = patches[0].width;
  Image out(ph * g, pw * g);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      const Image& p = patches[static_cast<std::size_t>(r) * g + c];
      require(p.height == ph && p.width == pw, "reassemble: patch sizes differ");
      for (int y = 0; y < ph; ++y)
        std::copy_n(&p.pixels[static_cast<std::size_t>(y) * pw * 3], static_cast<std::size_t>(pw) * 3,
                    &out.pixels[(static_cast<std::size_t>(r * ph + y) * out.width + c * pw) * 3]);
    }
  }
  return out;
}

FeatureMap reassemble(std::span<const FeatureMap> patch_maps, int g) {
  require(g >= 1 && patch_maps.size() == static_cast<std::size_t>(g) * g,
          "reassemble: expected " + std::to_string(g * g) + " maps, got " + std::to_string(patch_maps.size()));
  const int d = patch_maps[0].channels(), h = patch_maps[0].height(), w = patch_maps[0].width();
  std::vector<float> stacked;
  stacked.reserve(patch_maps.size() * d * h * w);
  for (const auto& m : patch_maps) {
    require(m.channels() == d && m.height() == h && m.width() == w,
            "reassemble: inconsistent patch map shapes (" + shape_str(m.tensor().shape()) + " vs " +
                shape_str(patch_maps[0].tensor().shape()) + ")");
    stacked.insert(stacked.end(), m.tensor().data().begin(), m.tensor().data().end());
  }
  FeatureMap out(d, g * h, g * w);
  kernels::tile_permute<float>(stacked, 1, d, g, h, w, false, out.tensor().data());
  return out;
}

FeatureMap resize_to(const FeatureMap& map, int target_h, int target_w) {
  require(target_h > 0 && target_w > 0, "resize_to: target size must be positive");
  FeatureMap out(map.channels(), target_h, target_w);
  kernels::bilinear_resize_forward<float>(map.tensor().data(), map.channels(), map.height(), map.width(), target_h,
                                          target_w, out.tensor().data());
  return out;
}

double alignment_loss(std::span<const FeatureMap> per_level_maps, Reduction reduction) {
  require(!per_level_maps.empty(), "alignment_loss: Level-0 map required");
  std::vector<std::vector<double>> copies;
  for (const auto& m : per_level_maps) {
    require(m.tensor().shape() == per_level_maps[0].tensor().shape(),
            "alignment_loss: shape mismatch " + shape_str(m.tensor().shape()) + " vs " +
                shape_str(per_level_maps[0].tensor().shape()));
    copies.emplace_back(m.tensor().data().begin(), m.tensor().data().end());
  }
  std::vector<std::span<const double>> spans(copies.begin(), copies.end());
  return kernels::alignment_loss_forward<double>(spans, 1, reduction);
}

HismOutput hism_forward(const ag::Var& images, ResNetEncoder& encoder, const LevelSpec& levels,
                        Reduction reduction, bool training) {
  require(images.defined() && images.value().rank() == 4, "hism_forward: expected [N, 3, S, S] images");
  levels.validate(images.shape()[2]);
  HismOutput out;
  out.grids = levels.grids;
  std::vector<ag::Var> raw;
  for (int g : levels.grids) {
    ag::Var patches = ops::tile_split(images, g);
    ag::Var feats = encoder.forward(patches, training);
    raw.push_back(ops::tile_merge(feats, g));
  }
  out.height = raw[0].shape()[2];
  out.width = raw[0].shape()[3];
  for (auto& m : raw) {
    if (m.shape()[2] == out.height && m.shape()[3] == out.width)
      out.maps.push_back(m);
    else
      out.maps.push_back(ops::resize_bilinear(m, out.height, out.width));
  }
  out.align_loss = ops::alignment_loss(out.maps, reduction);
  return out;
}

}  // namespace hifusion::hism
