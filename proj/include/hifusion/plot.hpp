#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hifusion/image.hpp"

namespace hifusion {

struct PlotSource {
  std::string name;
  Eigen::MatrixXd values;  // spots x genes, columns follow PlotRequest::genes
};

struct PlotRequest {
  std::vector<std::string> genes;
  std::vector<std::pair<int, int>> coords;  // spot centers (x, y) in slide pixels
  std::vector<PlotSource> sources;          // sources[0] is the reference (ground truth)
  int panel_size = 256;
};

struct PanelInfo {
  std::string gene, source;
  double mae = 0;
  double pcc = 0;  // NaN when either side has zero variance
  std::string label;
};

// Spot-centered discs colored on one scale per gene row (viridis, brighter = higher).
Rgb8Image render_panel(const std::vector<std::pair<int, int>>& coords, const Eigen::VectorXd& values, double lo,
                       double hi, int size);

// Rows = genes, columns = sources, each panel annotated with MAE/PCC against sources[0].
Rgb8Image render_expression_panels(const PlotRequest& request, std::vector<PanelInfo>* info = nullptr);

}  // namespace hifusion
