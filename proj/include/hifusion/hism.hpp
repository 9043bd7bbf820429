#pragma once

// Hierarchical intra-spot modeling: g x g decomposition of a spot image,
// shared-encoder features per level, spatial reassembly, bilinear alignment
// to the Level-0 grid and the cross-scale L1 alignment loss.

#include <span>
#include <vector>

#include "hifusion/encoders.hpp"
#include "hifusion/kernels/fusion.hpp"

namespace hifusion::hism {

using kernels::Reduction;

// Ordered decomposition grids; 1 (the whole spot) is always first.
struct LevelSpec {
  std::vector<int> grids{1, 2, 7};

  void validate(int spot_size) const;
  std::string label() const;  // e.g. "1x1 + 2x2 + 7x7"
};

// Row-major g x g non-overlapping tiles, each (S/g) x (S/g).
std::vector<Image> decompose(const Image& image, int g);
// Pixel-level inverse of decompose.
Image reassemble_pixels(std::span<const Image> patches, int g);

// Places patch (r, c)'s map in block (r, c) of a d x (g*h) x (g*w) map.
FeatureMap reassemble(std::span<const FeatureMap> patch_maps, int g);

// Bilinear with half-pixel centers; exact copy when the size already matches.
FeatureMap resize_to(const FeatureMap& map, int target_h, int target_w);

// sum over levels s >= 1 of reduce(|F_s - F_0|); maps[0] is Level-0.
double alignment_loss(std::span<const FeatureMap> per_level_maps, Reduction reduction);

struct HismOutput {
  std::vector<int> grids;
  std::vector<ag::Var> maps;  // [N, d, h, w] per level, all at Level-0's h x w
  ag::Var align_loss;         // scalar, batch mean
  int height = 0, width = 0;
};

// images [N, 3, S, S]. One encoder call per level, batched over N * g * g tiles.
HismOutput hism_forward(const ag::Var& images, ResNetEncoder& encoder, const LevelSpec& levels,
                        Reduction reduction, bool training);

}  // namespace hifusion::hism
