#include "hifusion/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "hifusion/error.hpp"

namespace hifusion {

Rgb8Image read_rgb8(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path.string());
  if (bgr.depth() != CV_8U) throw IoError("image is not 8-bit: " + path.string());
  Rgb8Image out;
  out.height = bgr.rows;
  out.width = bgr.cols;
  out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      auto* p = out.at(y, x);
      p[0] = row[x][2];
      p[1] = row[x][1];
      p[2] = row[x][0];
    }
  }
  return out;
}

void write_rgb8(const std::filesystem::path& path, const Rgb8Image& image) {
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      const auto* p = image.at(y, x);
      row[x] = cv::Vec3b(p[2], p[1], p[0]);
    }
  }
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

Tensor to_batch(std::span<const Image> images) {
  require(!images.empty(), "to_batch: no images");
  const int h = images[0].height, w = images[0].width;
  Tensor out({static_cast<int>(images.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < images.size(); ++n) {
    require(images[n].height == h && images[n].width == w, "to_batch: image sizes differ");
    float* dst = out.ptr() + n * 3 * plane;
    const float* src = images[n].pixels.data();
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) dst[c * plane + i] = src[i * 3 + c];
  }
  return out;
}

Image from_chw(const Tensor& batch, int index) {
  require(batch.rank() == 4 && batch.dim(1) == 3, "from_chw: expected [N, 3, H, W]");
  Image img(batch.dim(2), batch.dim(3));
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  const float* src = batch.ptr() + static_cast<std::size_t>(index) * 3 * plane;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] = src[c * plane + i];
  return img;
}

}  // namespace hifusion
