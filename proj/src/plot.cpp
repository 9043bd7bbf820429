#include "hifusion/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "hifusion/error.hpp"

namespace hifusion {

namespace {

constexpr int kHeader = 28;
constexpr int kRowLabel = 90;
constexpr int kGap = 6;

cv::Mat to_mat(const Rgb8Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  std::copy(img.pixels.begin(), img.pixels.end(), m.data);
  return m;
}

Rgb8Image from_mat(const cv::Mat& m) {
  Rgb8Image img;
  img.height = m.rows;
  img.width = m.cols;
  img.pixels.assign(m.data, m.data + static_cast<std::size_t>(m.rows) * m.cols * 3);
  return img;
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::ArrayXd dx = x.array() - x.mean(), dy = y.array() - y.mean();
  const double sxx = dx.square().sum(), syy = dy.square().sum();
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp((dx * dy).sum() / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

Rgb8Image render_panel(const std::vector<std::pair<int, int>>& coords, const Eigen::VectorXd& values, double lo,
                       double hi, int size) {
  require(static_cast<Eigen::Index>(coords.size()) == values.size(), "render_panel: coordinate/value count mismatch");
  require(size >= 16, "render_panel: panel too small");
  cv::Mat panel(size, size, CV_8UC3, cv::Scalar(0, 0, 0));
  if (coords.empty()) return from_mat(panel);
  int x0 = coords[0].first, x1 = x0, y0 = coords[0].second, y1 = y0;
  for (const auto& [x, y] : coords) {
    x0 = std::min(x0, x), x1 = std::max(x1, x);
    y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  const double extent = std::max({x1 - x0, y1 - y0, 1});
  const int margin = size / 12;
  const double scale = (size - 2 * margin) / extent;
  // Spot radius from the nearest-neighbor pitch, capped to keep discs apart.
  double pitch = extent;
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (std::size_t j = i + 1; j < coords.size(); ++j) {
      const double dx = coords[i].first - coords[j].first, dy = coords[i].second - coords[j].second;
      pitch = std::min(pitch, std::sqrt(dx * dx + dy * dy));
    }
  const int radius = std::max(2, static_cast<int>(0.45 * pitch * scale));

  cv::Mat level(1, static_cast<int>(coords.size()), CV_8UC1);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double t = hi > lo ? (values(static_cast<Eigen::Index>(i)) - lo) / (hi - lo) : 0.5;
    level.at<std::uint8_t>(0, static_cast<int>(i)) = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255));
  }
  cv::Mat colors;
  cv::applyColorMap(level, colors, cv::COLORMAP_VIRIDIS);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const cv::Vec3b bgr = colors.at<cv::Vec3b>(0, static_cast<int>(i));
    const cv::Point c(margin + static_cast<int>(std::lround((coords[i].first - x0) * scale)),
                      margin + static_cast<int>(std::lround((coords[i].second - y0) * scale)));
    cv::circle(panel, c, radius, cv::Scalar(bgr[2], bgr[1], bgr[0]), cv::FILLED, cv::LINE_8);
  }
  return from_mat(panel);
}

Rgb8Image render_expression_panels(const PlotRequest& req, std::vector<PanelInfo>* info) {
  require(!req.sources.empty(), "plot: no sources");
  require(!req.genes.empty(), "plot: no genes");
  const auto n = static_cast<Eigen::Index>(req.coords.size());
  for (const auto& s : req.sources)
    require(s.values.rows() == n && s.values.cols() == static_cast<Eigen::Index>(req.genes.size()),
            "plot: source " + s.name + " has the wrong shape");
  const int P = req.panel_size;
  const int rows = static_cast<int>(req.genes.size()), cols = static_cast<int>(req.sources.size());
  cv::Mat canvas(kHeader + rows * (P + kHeader + kGap), kRowLabel + cols * (P + kGap), CV_8UC3,
                 cv::Scalar(255, 255, 255));
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  for (int c = 0; c < cols; ++c)
    cv::putText(canvas, req.sources[c].name, cv::Point(kRowLabel + c * (P + kGap) + 4, 20), font, 0.55,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  for (int r = 0; r < rows; ++r) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : req.sources) {
      lo = std::min(lo, s.values.col(r).minCoeff());
      hi = std::max(hi, s.values.col(r).maxCoeff());
    }
    const int top = kHeader + r * (P + kHeader + kGap);
    cv::putText(canvas, req.genes[r], cv::Point(6, top + kHeader + P / 2), font, 0.55, cv::Scalar(0, 0, 0), 1,
                cv::LINE_AA);
    for (int c = 0; c < cols; ++c) {
      const Eigen::VectorXd v = req.sources[c].values.col(r);
      const Eigen::VectorXd ref = req.sources[0].values.col(r);
      PanelInfo pi;
      pi.gene = req.genes[r];
      pi.source = req.sources[c].name;
      pi.mae = (v - ref).array().abs().mean();
      pi.pcc = pearson(v, ref);
      pi.label = std::isnan(pi.pcc) ? fmt::format("MAE {:.3f}  PCC n/a", pi.mae)
                                    : fmt::format("MAE {:.3f}  PCC {:.2f}", pi.mae, pi.pcc);
      const int left = kRowLabel + c * (P + kGap);
      cv::putText(canvas, pi.label, cv::Point(left + 4, top + 18), font, 0.45, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
      const cv::Mat panel = to_mat(render_panel(req.coords, v, lo, hi, P));
      panel.copyTo(canvas(cv::Rect(left, top + kHeader, P, P)));
      if (info) info->push_back(std::move(pi));
    }
  }
  return from_mat(canvas);
}

}  // namespace hifusion
