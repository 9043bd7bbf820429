#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hifusion/image.hpp"

namespace hifusion {

struct SpotMeta {
  std::string spot_id;
  int center_x_px = 0;
  int center_y_px = 0;
  bool operator==(const SpotMeta&) const = default;
};

struct SlideRecord {
  std::string slide_id;
  std::string patient_id;
  int layer_index = 0;
  std::filesystem::path image_path;
  std::vector<SpotMeta> spots;
  bool operator==(const SlideRecord&) const = default;
};

enum class ExpressionSpace { kRawCounts, kNormalized };

// n spots x m genes, row-major by spot.
struct ExpressionMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> gene_names;
  std::vector<std::string> spot_ids;
  ExpressionSpace space = ExpressionSpace::kRawCounts;

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
  void validate() const;  // throws DataError
  std::map<std::string, int> row_index() const;
  // Rows in the given spot order; throws DataError for unknown ids.
  ExpressionMatrix select_rows(const std::vector<std::string>& ids) const;
  ExpressionMatrix select_genes(const std::vector<std::string>& genes) const;
  bool operator==(const ExpressionMatrix& o) const {
    return values == o.values && gene_names == o.gene_names && spot_ids == o.spot_ids && space == o.space;
  }
};

struct SpotSample {
  Image spot_image;
  Image neighbor_image;
  std::vector<float> target;
  std::string spot_id, slide_id, patient_id;
};

// log((x + 1) / sum_i (x_i + 1)) per spot, natural log.
Eigen::MatrixXd normalize_expression(const Eigen::MatrixXd& counts);
ExpressionMatrix normalize_expression(const ExpressionMatrix& counts);

// top_k genes by descending mean raw count over `rows` (all rows when empty);
// ties go to the alphabetically smaller name.
std::vector<std::string> select_top_genes(const ExpressionMatrix& counts, int top_k,
                                          const std::vector<int>& rows = {});

// size x size crop centered on (cx, cy); out-of-bounds pixels are 0.
Image crop_centered(const Rgb8Image& image, int cx, int cy, int size);
Image crop_spot(const Rgb8Image& slide_image, const SpotMeta& spot, int size);
Image crop_neighbor(const Rgb8Image& slide_image, const SpotMeta& spot, int size);

struct Dataset {
  std::vector<SlideRecord> slides;
  ExpressionMatrix counts;

  // Images by slide_id; filled by synthesize_dataset and load_images().
  std::map<std::string, std::shared_ptr<const Rgb8Image>> images;

  void validate() const;  // throws DataError
  const Rgb8Image& image(const std::string& slide_id) const;
  void load_images(const std::filesystem::path& root);
  std::vector<std::string> patients() const;  // sorted unique
  int n_spots() const;
};

// One row per spot across all slides, in slide then spot order.
struct SpotRef {
  int slide = 0;
  int spot = 0;
  int row = 0;  // row in Dataset::counts
};
std::vector<SpotRef> spot_index(const Dataset& data);

struct SynthConfig {
  int patients = 4;
  int layers = 3;
  int spots_per_slide = 64;
  int genes = 8;
  std::uint64_t seed = 7;
  int spot_size = 56;  // pixels per spot crop; geometry scales with it
  double style_shift = 0.0;            // per-patient stain and expression offset magnitude
  int uncoupled_genes = 0;             // trailing genes with zero image coupling
  double base_count = 500.0;            // mean count scale
  double layer_perturbation = 0.15;    // per-layer deviation of the motif fields
};

// Generator-side ground truth for oracle checks.
struct SynthTruth {
  Eigen::MatrixXd rates;       // expected counts per spot (n x m)
  Eigen::MatrixXd motifs;      // per-spot motif intensities (n x 3)
  std::vector<double> strength;  // per-gene coupling strength
  std::vector<double> patient_offset;  // per-patient log-expression offset scale
};

Dataset synthesize_dataset(const SynthConfig& config, SynthTruth* truth = nullptr);

// slides.tsv, spots.tsv, counts.tsv and images/<slide_id>.png
void write_dataset(const Dataset& data, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root, bool load_images = true);

// SHA-256 over the TSV tables and image files, hex encoded.
std::string dataset_fingerprint(const std::filesystem::path& root);

}  // namespace hifusion
