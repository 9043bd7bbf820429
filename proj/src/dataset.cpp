#include "hifusion/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <array>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <openssl/evp.h>

#include "hifusion/error.hpp"

namespace hifusion {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- matrix

void ExpressionMatrix::validate() const {
  if (static_cast<std::size_t>(values.rows()) != spot_ids.size() ||
      static_cast<std::size_t>(values.cols()) != gene_names.size())
    throw DataError(fmt::format("expression matrix is {}x{} but has {} spot ids and {} gene names", values.rows(),
                                values.cols(), spot_ids.size(), gene_names.size()));
  std::set<std::string> seen;
  for (const auto& g : gene_names)
    if (!seen.insert(g).second) throw DataError("duplicate gene name " + g);
  seen.clear();
  for (const auto& s : spot_ids)
    if (!seen.insert(s).second) throw DataError("duplicate spot id " + s);
  if (space == ExpressionSpace::kRawCounts) {
    for (Eigen::Index r = 0; r < values.rows(); ++r)
      for (Eigen::Index c = 0; c < values.cols(); ++c) {
        const double v = values(r, c);
        if (!(v >= 0) || v != std::floor(v))
          throw DataError(fmt::format("raw count for spot {} gene {} is not a non-negative integer: {}", spot_ids[r],
                                      gene_names[c], v));
      }
  }
}

std::map<std::string, int> ExpressionMatrix::row_index() const {
  std::map<std::string, int> idx;
  for (std::size_t i = 0; i < spot_ids.size(); ++i) idx[spot_ids[i]] = static_cast<int>(i);
  return idx;
}

ExpressionMatrix ExpressionMatrix::select_rows(const std::vector<std::string>& ids) const {
  const auto idx = row_index();
  ExpressionMatrix out;
  out.gene_names = gene_names;
  out.space = space;
  out.spot_ids = ids;
  out.values.resize(static_cast<Eigen::Index>(ids.size()), values.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = idx.find(ids[i]);
    if (it == idx.end()) throw DataError("unknown spot id " + ids[i]);
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(it->second);
  }
  return out;
}

ExpressionMatrix ExpressionMatrix::select_genes(const std::vector<std::string>& genes) const {
  std::map<std::string, int> col;
  for (std::size_t i = 0; i < gene_names.size(); ++i) col[gene_names[i]] = static_cast<int>(i);
  ExpressionMatrix out;
  out.spot_ids = spot_ids;
  out.space = space;
  out.gene_names = genes;
  out.values.resize(values.rows(), static_cast<Eigen::Index>(genes.size()));
  for (std::size_t j = 0; j < genes.size(); ++j) {
    auto it = col.find(genes[j]);
    if (it == col.end()) throw DataError("unknown gene " + genes[j]);
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(it->second);
  }
  return out;
}

// ---------------------------------------------------------------- normalization / selection

Eigen::MatrixXd normalize_expression(const Eigen::MatrixXd& counts) {
  require(counts.rows() > 0 && counts.cols() > 0, "normalize_expression: empty count matrix");
  require((counts.array() >= 0).all(), "normalize_expression: counts must be non-negative");
  Eigen::MatrixXd out(counts.rows(), counts.cols());
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    const double log_total = std::log((counts.row(r).array() + 1.0).sum());
    out.row(r) = (counts.row(r).array() + 1.0).log() - log_total;
  }
  return out;
}

ExpressionMatrix normalize_expression(const ExpressionMatrix& counts) {
  require(counts.space == ExpressionSpace::kRawCounts, "normalize_expression: matrix is already normalized");
  ExpressionMatrix out = counts;
  out.values = normalize_expression(counts.values);
  out.space = ExpressionSpace::kNormalized;
  return out;
}

std::vector<std::string> select_top_genes(const ExpressionMatrix& counts, int top_k, const std::vector<int>& rows) {
  const int m = counts.cols();
  if (top_k < 1 || top_k > m)
    throw InvalidInput(fmt::format("top_k = {} but the matrix has m = {} genes", top_k, m));
  require(counts.space == ExpressionSpace::kRawCounts, "select_top_genes: expects raw counts");
  std::vector<double> mean(m, 0.0);
  if (rows.empty()) {
    require(counts.rows() > 0, "select_top_genes: no spots");
    for (int g = 0; g < m; ++g) mean[g] = counts.values.col(g).mean();
  } else {
    for (int r : rows) {
      require(r >= 0 && r < counts.rows(), "select_top_genes: row out of range");
      for (int g = 0; g < m; ++g) mean[g] += counts.values(r, g);
    }
    for (auto& v : mean) v /= static_cast<double>(rows.size());
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (mean[a] != mean[b]) return mean[a] > mean[b];
    return counts.gene_names[a] < counts.gene_names[b];
  });
  std::vector<std::string> out;
  for (int i = 0; i < top_k; ++i) out.push_back(counts.gene_names[order[i]]);
  return out;
}

// ---------------------------------------------------------------- cropping

Image crop_centered(const Rgb8Image& image, int cx, int cy, int size) {
  require(size > 0 && size % 2 == 0, "crop size must be positive and even, got " + std::to_string(size));
  Image out(size, size);
  const int x0 = cx - size / 2, y0 = cy - size / 2;
  for (int y = 0; y < size; ++y) {
    const int sy = y0 + y;
    if (sy < 0 || sy >= image.height) continue;
    for (int x = 0; x < size; ++x) {
      const int sx = x0 + x;
      if (sx < 0 || sx >= image.width) continue;
      const auto* p = image.at(sy, sx);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(p[c]) / 255.0f;
    }
  }
  return out;
}

Image crop_spot(const Rgb8Image& slide_image, const SpotMeta& spot, int size) {
  return crop_centered(slide_image, spot.center_x_px, spot.center_y_px, size);
}

Image crop_neighbor(const Rgb8Image& slide_image, const SpotMeta& spot, int size) {
  return crop_centered(slide_image, spot.center_x_px, spot.center_y_px, size);
}

// ---------------------------------------------------------------- dataset

void Dataset::validate() const {
  if (slides.empty()) throw DataError("dataset has no slides");
  std::set<std::string> slide_ids, spot_ids;
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& s : slides) {
    if (!slide_ids.insert(s.slide_id).second) throw DataError("duplicate slide id " + s.slide_id);
    keys.insert({s.patient_id, s.slide_id});
    if (s.layer_index < 0) throw DataError("slide " + s.slide_id + " has a negative layer index");
    auto img = images.find(s.slide_id);
    for (const auto& sp : s.spots) {
      if (!spot_ids.insert(sp.spot_id).second) throw DataError("duplicate spot id " + sp.spot_id);
      if (sp.center_x_px < 0 || sp.center_y_px < 0)
        throw DataError("spot " + sp.spot_id + " has negative center coordinates");
      if (img != images.end() && (sp.center_x_px >= img->second->width || sp.center_y_px >= img->second->height))
        throw DataError(fmt::format("spot {} center ({}, {}) lies outside the {}x{} image of slide {}", sp.spot_id,
                                    sp.center_x_px, sp.center_y_px, img->second->width, img->second->height,
                                    s.slide_id));
    }
  }
  counts.validate();
  if (counts.spot_ids.size() != spot_ids.size())
    throw DataError(fmt::format("counts has {} rows but the slides list {} spots", counts.spot_ids.size(),
                                spot_ids.size()));
  for (const auto& id : counts.spot_ids)
    if (!spot_ids.count(id)) throw DataError("counts row for unknown spot " + id);
}

const Rgb8Image& Dataset::image(const std::string& slide_id) const {
  auto it = images.find(slide_id);
  if (it == images.end()) throw DataError("image for slide " + slide_id + " is not loaded");
  return *it->second;
}

void Dataset::load_images(const fs::path& root) {
  for (const auto& s : slides) {
    const fs::path p = s.image_path.is_absolute() ? s.image_path : root / s.image_path;
    images[s.slide_id] = std::make_shared<const Rgb8Image>(read_rgb8(p));
  }
}

std::vector<std::string> Dataset::patients() const {
  std::set<std::string> p;
  for (const auto& s : slides) p.insert(s.patient_id);
  return {p.begin(), p.end()};
}

int Dataset::n_spots() const {
  int n = 0;
  for (const auto& s : slides) n += static_cast<int>(s.spots.size());
  return n;
}

std::vector<SpotRef> spot_index(const Dataset& data) {
  const auto rows = data.counts.row_index();
  std::vector<SpotRef> out;
  for (std::size_t i = 0; i < data.slides.size(); ++i) {
    const auto& spots = data.slides[i].spots;
    for (std::size_t j = 0; j < spots.size(); ++j) {
      auto it = rows.find(spots[j].spot_id);
      if (it == rows.end()) throw DataError("no counts row for spot " + spots[j].spot_id);
      out.push_back({static_cast<int>(i), static_cast<int>(j), it->second});
    }
  }
  return out;
}

// ---------------------------------------------------------------- synthesis

namespace {

constexpr int kMotifs = 3;
const char* const kMarkerNames[] = {"ERBB2", "KRT19", "CD74", "TMSB10"};

struct Blob {
  double x, y, sigma, amp;
};

struct MotifField {
  std::vector<Blob> blobs;
  double operator()(double x, double y) const {
    double v = 0;
    for (const auto& b : blobs) {
      const double dx = x - b.x, dy = y - b.y;
      v += b.amp * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
    }
    return std::min(1.0, v);
  }
};

std::string gene_name(int g) {
  if (g < 4) return kMarkerNames[g];
  return fmt::format("SYN{:03d}", g);
}

void stamp_disc(std::vector<double>& rgb, int w, int h, double cx, double cy, double r, const double color[3],
                double alpha) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r))), x1 = std::min(w - 1, static_cast<int>(cx + r));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r))), y1 = std::min(h - 1, static_cast<int>(cy + r));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy > r * r) continue;
      double* p = &rgb[(static_cast<std::size_t>(y) * w + x) * 3];
      for (int c = 0; c < 3; ++c) p[c] = (1 - alpha) * p[c] + alpha * color[c];
    }
}

}  // namespace

Dataset synthesize_dataset(const SynthConfig& cfg, SynthTruth* truth) {
  require(cfg.patients >= 1 && cfg.layers >= 1 && cfg.spots_per_slide >= 1, "synthesize: sizes must be positive");
  require(cfg.genes >= 1, "synthesize: need at least one gene");
  require(cfg.spot_size >= 8 && cfg.spot_size % 2 == 0, "synthesize: spot_size must be even and >= 8");
  require(cfg.uncoupled_genes >= 0 && cfg.uncoupled_genes <= cfg.genes, "synthesize: bad uncoupled_genes");
  require(cfg.base_count > 0, "synthesize: base_count must be positive");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  // 200 um pitch at 0.67 um/px for a 224 px spot, scaled to spot_size.
  const double scale = cfg.spot_size / 224.0;
  const int pitch = std::max(cfg.spot_size + 2, static_cast<int>(std::lround(200.0 / 0.67 * scale)));
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.spots_per_slide))));
  const int margin = cfg.spot_size;
  const int img_size = side * pitch + 2 * margin - (pitch - cfg.spot_size);

  const int m = cfg.genes;
  std::vector<double> strength(m), base(m);
  std::vector<std::array<double, kMotifs>> loading(m);
  for (int g = 0; g < m; ++g) {
    const bool coupled = g < m - cfg.uncoupled_genes;
    strength[g] = coupled ? (g == 0 ? 4.0 : 2.5 - 1.5 * g / std::max(1, m - 1) - 0.2 * unif(rng)) : 0.0;
    base[g] = cfg.base_count * (g == 0 ? 2.0 : 0.8 + 0.8 * unif(rng));
    if (g == 0) {
      loading[g] = {1.0, 0.0, 0.0};
    } else {
      double total = 0;
      for (auto& l : loading[g]) total += (l = -std::log(1e-12 + unif(rng)));
      for (auto& l : loading[g]) l /= total;
    }
  }

  // Per-patient motif fields, stain gains and expression offsets.
  struct PatientStyle {
    std::array<MotifField, kMotifs> fields;
    std::array<double, 3> gain;
    std::vector<double> offset;
  };
  std::vector<PatientStyle> styles(cfg.patients);
  const double extent = side * pitch;
  for (auto& st : styles) {
    for (auto& f : st.fields) {
      const int n_blobs = 4;
      for (int b = 0; b < n_blobs; ++b)
        f.blobs.push_back({margin + unif(rng) * extent, margin + unif(rng) * extent,
                           pitch * (1.2 + 1.3 * unif(rng)), 0.6 + 0.5 * unif(rng)});
    }
    for (auto& gch : st.gain) gch = 1.0 + cfg.style_shift * 0.25 * normal(rng);
    st.offset.resize(m);
    for (auto& o : st.offset) o = cfg.style_shift * normal(rng);
  }

  const double nucleus_color[3] = {0.36, 0.18, 0.52};
  const double dot_color[3] = {0.18, 0.30, 0.85};
  const double light[3] = {0.97, 0.90, 0.93}, deep[3] = {0.86, 0.42, 0.62};
  const double nucleus_r = std::max(1.5, 3.2 * cfg.spot_size / 56.0);
  const double dot_r = std::max(1.0, 1.6 * cfg.spot_size / 56.0);

  Dataset data;
  std::vector<std::vector<double>> rate_rows, motif_rows;
  std::vector<std::vector<double>> count_rows;
  std::vector<std::string> spot_ids;
  for (int p = 0; p < cfg.patients; ++p) {
    const std::string patient = fmt::format("P{:02d}", p);
    for (int l = 0; l < cfg.layers; ++l) {
      SlideRecord slide;
      slide.slide_id = fmt::format("{}_L{}", patient, l);
      slide.patient_id = patient;
      slide.layer_index = l;
      slide.image_path = fs::path("images") / (slide.slide_id + ".png");

      // Layer fields: the patient's blobs, displaced and rescaled a little.
      std::array<MotifField, kMotifs> fields = styles[p].fields;
      if (l > 0) {
        for (auto& f : fields)
          for (auto& b : f.blobs) {
            b.x += cfg.layer_perturbation * pitch * normal(rng);
            b.y += cfg.layer_perturbation * pitch * normal(rng);
            b.amp *= std::max(0.2, 1.0 + cfg.layer_perturbation * normal(rng));
          }
      }

      const int W = img_size, H = img_size;
      std::vector<double> rgb(static_cast<std::size_t>(W) * H * 3);
      std::vector<double> f1(static_cast<std::size_t>(W) * H);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double v = fields[1](x + 0.5, y + 0.5);
          f1[static_cast<std::size_t>(y) * W + x] = v;
          for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] = light[c] + v * (deep[c] - light[c]);
        }
      // Nuclei and dots by thinning a uniform candidate process.
      const double area = static_cast<double>(W) * H;
      const int n_nuclei = static_cast<int>(area / (nucleus_r * nucleus_r * 9.0));
      for (int i = 0; i < n_nuclei; ++i) {
        const double x = unif(rng) * W, y = unif(rng) * H;
        const double keep = unif(rng);
        const double rr = nucleus_r * (0.8 + 0.4 * unif(rng));
        if (keep < fields[0](x, y)) stamp_disc(rgb, W, H, x, y, rr, nucleus_color, 0.9);
      }
      const int n_dots = static_cast<int>(area / (dot_r * dot_r * 14.0));
      for (int i = 0; i < n_dots; ++i) {
        const double x = unif(rng) * W, y = unif(rng) * H;
        const double keep = unif(rng);
        if (keep < fields[2](x, y)) stamp_disc(rgb, W, H, x, y, dot_r, dot_color, 0.9);
      }

      auto image = std::make_shared<Rgb8Image>();
      image->height = H;
      image->width = W;
      image->pixels.resize(static_cast<std::size_t>(W) * H * 3);
      for (std::size_t i = 0; i < static_cast<std::size_t>(W) * H; ++i)
        for (int c = 0; c < 3; ++c) {
          const double v = rgb[i * 3 + c] * styles[p].gain[c] + 0.02 * normal(rng);
          image->pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }

      // Spots on a jittered grid.
      const int half = cfg.spot_size / 2;
      for (int s = 0; s < cfg.spots_per_slide; ++s) {
        const int gx = s % side, gy = s / side;
        const int jitter = std::max(1, pitch / 10);
        const int cx = margin + half + gx * pitch + static_cast<int>(std::lround((unif(rng) * 2 - 1) * jitter));
        const int cy = margin + half + gy * pitch + static_cast<int>(std::lround((unif(rng) * 2 - 1) * jitter));
        SpotMeta meta{fmt::format("{}_S{:03d}", slide.slide_id, s), cx, cy};

        // Motif intensity = field average over the spot window.
        std::array<double, kMotifs> mv{};
        int samples = 0;
        for (int y = cy - half; y < cy + half; y += 2)
          for (int x = cx - half; x < cx + half; x += 2) {
            for (int j = 0; j < kMotifs; ++j) mv[j] += fields[j](x + 0.5, y + 0.5);
            ++samples;
          }
        for (auto& v : mv) v /= samples;

        std::vector<double> rates(m), counts(m);
        for (int g = 0; g < m; ++g) {
          double drive = 0;
          for (int j = 0; j < kMotifs; ++j) drive += loading[g][j] * mv[j];
          rates[g] = base[g] * (1.0 + strength[g] * drive) * std::exp(styles[p].offset[g]);
          std::poisson_distribution<long> pois(rates[g]);
          counts[g] = static_cast<double>(pois(rng));
        }
        rate_rows.push_back(rates);
        motif_rows.push_back({mv.begin(), mv.end()});
        count_rows.push_back(counts);
        spot_ids.push_back(meta.spot_id);
        slide.spots.push_back(meta);
      }
      data.images[slide.slide_id] = image;
      data.slides.push_back(std::move(slide));
    }
  }

  const auto n = static_cast<Eigen::Index>(count_rows.size());
  data.counts.values.resize(n, m);
  for (Eigen::Index r = 0; r < n; ++r)
    for (int g = 0; g < m; ++g) data.counts.values(r, g) = count_rows[r][g];
  for (int g = 0; g < m; ++g) data.counts.gene_names.push_back(gene_name(g));
  data.counts.spot_ids = spot_ids;
  data.counts.space = ExpressionSpace::kRawCounts;

  if (truth) {
    truth->rates.resize(n, m);
    truth->motifs.resize(n, kMotifs);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (int g = 0; g < m; ++g) truth->rates(r, g) = rate_rows[r][g];
      for (int j = 0; j < kMotifs; ++j) truth->motifs(r, j) = motif_rows[r][j];
    }
    truth->strength = strength;
    truth->patient_offset.clear();
    for (const auto& st : styles) {
      double s = 0;
      for (double o : st.offset) s += std::abs(o);
      truth->patient_offset.push_back(s / m);
    }
  }
  return data;
}

// ---------------------------------------------------------------- IO

namespace {

struct TsvReader {
  fs::path path;
  std::ifstream in;
  int line_no = 0;

  explicit TsvReader(const fs::path& p) : path(p), in(p) {
    if (!in) throw IoError("cannot open " + p.string());
  }

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      fields.clear();
      std::size_t start = 0;
      while (true) {
        const std::size_t tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(fmt::format("{}:{}: {}", path.string(), line_no, msg));
  }

  int to_int(const std::string& s, const char* what) const {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) fail(fmt::format("{} is not an integer: \"{}\"", what, s));
    return static_cast<int>(v);
  }

  double to_count(const std::string& s, const char* what) const {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) fail(fmt::format("{} is not a number: \"{}\"", what, s));
    return v;
  }

  void expect_header(const std::vector<std::string>& expected) {
    std::vector<std::string> f;
    if (!next(f)) fail("file is empty");
    if (f.size() < expected.size() || !std::equal(expected.begin(), expected.end(), f.begin()))
      fail("unexpected header; expected columns starting with " + fmt::format("{}", fmt::join(expected, ", ")));
  }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << content;
  if (!out) throw IoError("write failed for " + p.string());
}

std::string fmt_value(double v, ExpressionSpace space) {
  if (space == ExpressionSpace::kRawCounts) return fmt::format("{}", static_cast<long long>(v));
  return fmt::format("{:.17g}", v);
}

}  // namespace

void write_dataset(const Dataset& data, const fs::path& root) {
  data.validate();
  fs::create_directories(root / "images");
  std::string slides = "slide_id\tpatient_id\tlayer_index\timage_file\n";
  std::string spots = "slide_id\tspot_id\tcenter_x_px\tcenter_y_px\n";
  for (const auto& s : data.slides) {
    slides += fmt::format("{}\t{}\t{}\t{}\n", s.slide_id, s.patient_id, s.layer_index, s.image_path.generic_string());
    for (const auto& sp : s.spots)
      spots += fmt::format("{}\t{}\t{}\t{}\n", s.slide_id, sp.spot_id, sp.center_x_px, sp.center_y_px);
    write_rgb8(root / s.image_path, data.image(s.slide_id));
  }
  std::string counts = "spot_id";
  for (const auto& g : data.counts.gene_names) counts += "\t" + g;
  counts += "\n";
  for (int r = 0; r < data.counts.rows(); ++r) {
    counts += data.counts.spot_ids[r];
    for (int c = 0; c < data.counts.cols(); ++c) counts += "\t" + fmt_value(data.counts.values(r, c), data.counts.space);
    counts += "\n";
  }
  write_file(root / "slides.tsv", slides);
  write_file(root / "spots.tsv", spots);
  write_file(root / "counts.tsv", counts);
}

Dataset load_dataset(const fs::path& root, bool load_images) {
  Dataset data;
  std::map<std::string, std::size_t> slide_pos;
  {
    TsvReader r(root / "slides.tsv");
    r.expect_header({"slide_id", "patient_id", "layer_index", "image_file"});
    std::vector<std::string> f;
    std::set<std::pair<std::string, std::string>> keys;
    while (r.next(f)) {
      if (f.size() != 4) r.fail(fmt::format("expected 4 columns, found {}", f.size()));
      SlideRecord s;
      s.slide_id = f[0];
      s.patient_id = f[1];
      s.layer_index = r.to_int(f[2], "layer_index");
      s.image_path = f[3];
      if (s.slide_id.empty() || s.patient_id.empty()) r.fail("empty slide or patient id");
      if (s.layer_index < 0) r.fail("layer_index must be >= 0");
      if (slide_pos.count(s.slide_id)) r.fail("duplicate slide id " + s.slide_id);
      if (!keys.insert({s.patient_id, s.slide_id}).second) r.fail("duplicate (patient, slide) pair");
      slide_pos[s.slide_id] = data.slides.size();
      data.slides.push_back(std::move(s));
    }
    if (data.slides.empty()) r.fail("no slides listed");
  }
  std::set<std::string> spot_ids;
  {
    TsvReader r(root / "spots.tsv");
    r.expect_header({"slide_id", "spot_id", "center_x_px", "center_y_px"});
    std::vector<std::string> f;
    int n = 0;
    while (r.next(f)) {
      if (f.size() != 4) r.fail(fmt::format("expected 4 columns, found {}", f.size()));
      auto it = slide_pos.find(f[0]);
      if (it == slide_pos.end()) r.fail("spot references unknown slide " + f[0]);
      SpotMeta sp{f[1], r.to_int(f[2], "center_x_px"), r.to_int(f[3], "center_y_px")};
      if (sp.spot_id.empty()) r.fail("empty spot id");
      if (sp.center_x_px < 0 || sp.center_y_px < 0) r.fail("negative spot center");
      if (!spot_ids.insert(sp.spot_id).second) r.fail("duplicate spot id " + sp.spot_id);
      data.slides[it->second].spots.push_back(sp);
      ++n;
    }
    if (n == 0) r.fail("spots table is empty");
  }
  {
    TsvReader r(root / "counts.tsv");
    std::vector<std::string> header;
    if (!r.next(header)) r.fail("file is empty");
    if (header.empty() || header[0] != "spot_id") r.fail("first header column must be spot_id");
    if (header.size() < 2) r.fail("no gene columns");
    data.counts.gene_names.assign(header.begin() + 1, header.end());
    std::set<std::string> genes;
    for (const auto& g : data.counts.gene_names)
      if (g.empty() || !genes.insert(g).second) r.fail("empty or duplicate gene name \"" + g + "\"");
    std::vector<std::string> f;
    std::vector<double> vals;
    std::set<std::string> seen;
    const std::size_t m = data.counts.gene_names.size();
    while (r.next(f)) {
      if (f.size() != m + 1) r.fail(fmt::format("expected {} columns, found {}", m + 1, f.size()));
      if (!spot_ids.count(f[0])) r.fail("counts row for unknown spot " + f[0]);
      if (!seen.insert(f[0]).second) r.fail("duplicate counts row for spot " + f[0]);
      for (std::size_t j = 1; j <= m; ++j) {
        const double v = r.to_count(f[j], "count");
        if (!(v >= 0) || v != std::floor(v))
          r.fail(fmt::format("count for gene {} is not a non-negative integer: {}", header[j], f[j]));
        vals.push_back(v);
      }
      data.counts.spot_ids.push_back(f[0]);
    }
    for (const auto& id : spot_ids)
      if (!seen.count(id)) throw DataError((root / "counts.tsv").string() + ": no counts row for spot " + id);
    const auto n = static_cast<Eigen::Index>(data.counts.spot_ids.size());
    data.counts.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        vals.data(), n, static_cast<Eigen::Index>(m));
    data.counts.space = ExpressionSpace::kRawCounts;
  }
  if (load_images) data.load_images(root);
  data.validate();
  return data;
}

std::string dataset_fingerprint(const fs::path& root) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 unavailable");
  auto feed = [&](const fs::path& p, const std::string& label) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    EVP_DigestUpdate(ctx.get(), label.data(), label.size() + 1);
    std::vector<char> buf(1 << 16);
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  };
  for (const char* t : {"slides.tsv", "spots.tsv", "counts.tsv"}) feed(root / t, t);
  const Dataset meta = load_dataset(root, false);
  for (const auto& s : meta.slides) feed(root / s.image_path, s.image_path.generic_string());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

}  // namespace hifusion
