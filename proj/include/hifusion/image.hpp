#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hifusion/tensor.hpp"

namespace hifusion {

// 8-bit interleaved RGB raster, the on-disk form of a slide.
struct Rgb8Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  std::uint8_t* at(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int y, int x) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

// H x W x 3 image with channel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // HWC

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// PNG or TIFF, 8-bit RGB. Throws IoError when unreadable.
Rgb8Image read_rgb8(const std::filesystem::path& path);
void write_rgb8(const std::filesystem::path& path, const Rgb8Image& image);

// Stacks HWC images into an NCHW tensor; all images must share a size.
Tensor to_batch(std::span<const Image> images);
Image from_chw(const Tensor& batch, int index);

}  // namespace hifusion
