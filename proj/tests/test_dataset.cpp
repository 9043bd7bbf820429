#include <fstream>

#include <gtest/gtest.h>

#include "hifusion/dataset.hpp"
#include "hifusion/error.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hifusion;

namespace {

ExpressionMatrix small_counts() {
  ExpressionMatrix m;
  m.values.resize(3, 4);
  m.values << 0, 5, 5, 1,  //
      2, 1, 1, 9,          //
      4, 3, 3, 2;
  m.gene_names = {"D", "B", "A", "C"};
  m.spot_ids = {"s0", "s1", "s2"};
  return m;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST(Normalize, MatchesClosedFormAndSumsToOne) {
  const auto counts = small_counts();
  const Eigen::MatrixXd y = normalize_expression(counts.values);
  EXPECT_NEAR(y(0, 0), std::log(1.0 / 15.0), 1e-15);
  EXPECT_NEAR(y(1, 3), std::log(10.0 / 17.0), 1e-15);
  for (int r = 0; r < y.rows(); ++r) EXPECT_NEAR(y.row(r).array().exp().sum(), 1.0, 1e-14);
  EXPECT_LT(oracle::rel_error(oracle::flatten(y), oracle::flatten(oracle::normalize(counts.values))), 1e-14);
}

TEST(Normalize, ZeroRowIsUniform) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(1, 4);
  const Eigen::MatrixXd y = normalize_expression(z);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(y(0, j), std::log(0.25), 1e-15);
}

TEST(Normalize, RejectsNegativeAndDoubleNormalization) {
  Eigen::MatrixXd bad(1, 2);
  bad << 1, -1;
  EXPECT_THROW(normalize_expression(bad), InvalidInput);
  const auto norm = normalize_expression(small_counts());
  EXPECT_EQ(norm.space, ExpressionSpace::kNormalized);
  EXPECT_THROW(normalize_expression(norm), InvalidInput);
}

TEST(TopGenes, OrdersByMeanWithNameTieBreak) {
  // means: D 2, B 3, A 3, C 4
  const auto genes = select_top_genes(small_counts(), 3);
  EXPECT_EQ(genes, (std::vector<std::string>{"C", "A", "B"}));
  EXPECT_EQ(select_top_genes(small_counts(), 4).back(), "D");
}

TEST(TopGenes, UsesOnlyGivenRows) {
  // row 2 alone: D 4, B 3, A 3, C 2
  EXPECT_EQ(select_top_genes(small_counts(), 2, {2}), (std::vector<std::string>{"D", "A"}));
}

TEST(TopGenes, TooManyNamesTheGeneCount) {
  try {
    select_top_genes(small_counts(), 250);
    FAIL() << "expected InvalidInput";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("m = 4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(select_top_genes(small_counts(), 0), InvalidInput);
}

TEST(ExpressionMatrix, SelectsRowsAndGenes) {
  const auto m = small_counts();
  const auto r = m.select_rows({"s2", "s0"});
  EXPECT_EQ(r.values(0, 3), 2);
  EXPECT_EQ(r.values(1, 1), 5);
  const auto g = m.select_genes({"C", "D"});
  EXPECT_EQ(g.values(1, 0), 9);
  EXPECT_EQ(g.values(1, 1), 2);
  EXPECT_THROW(m.select_rows({"nope"}), DataError);
  EXPECT_THROW(m.select_genes({"nope"}), DataError);
}

TEST(ExpressionMatrix, ValidateRejectsFractionalCountsAndDuplicates) {
  auto m = small_counts();
  m.values(0, 0) = 0.5;
  EXPECT_THROW(m.validate(), DataError);
  m = small_counts();
  m.gene_names[1] = "D";
  EXPECT_THROW(m.validate(), DataError);
}

TEST(Crop, CenteredWithZeroPadding) {
  Rgb8Image img;
  img.height = 4;
  img.width = 6;
  img.pixels.resize(4 * 6 * 3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) img.at(y, x)[0] = static_cast<std::uint8_t>(10 * y + x);
  // top-left at (cx - 2, cy - 2)
  const Image c = crop_centered(img, 1, 1, 4);
  EXPECT_EQ(c.height, 4);
  EXPECT_FLOAT_EQ(c.at(0, 0, 0), 0.0f);  // (-1, -1) is padding
  EXPECT_FLOAT_EQ(c.at(1, 1, 0), 0.0f / 255.0f);
  EXPECT_FLOAT_EQ(c.at(2, 3, 0), 12.0f / 255.0f);
  EXPECT_FLOAT_EQ(c.at(3, 3, 0), 22.0f / 255.0f);
  const Image far = crop_centered(img, 100, 100, 2);
  for (float v : far.pixels) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(crop_centered(img, 1, 1, 3), InvalidInput);
}

TEST(Synth, DeterministicAndSeedSensitive) {
  const auto a = synthesize_dataset(fixtures::tiny_synth(3));
  const auto b = synthesize_dataset(fixtures::tiny_synth(3));
  const auto c = synthesize_dataset(fixtures::tiny_synth(4));
  EXPECT_TRUE(a.counts == b.counts);
  EXPECT_EQ(a.slides, b.slides);
  EXPECT_EQ(a.image("P00_L0").pixels, b.image("P00_L0").pixels);
  EXPECT_FALSE(a.counts == c.counts);
}

TEST(Synth, LayoutAndNames) {
  const auto d = synthesize_dataset(fixtures::tiny_synth());
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(d.slides.size(), 4u);
  EXPECT_EQ(d.n_spots(), 36);
  EXPECT_EQ(d.patients(), (std::vector<std::string>{"P00", "P01"}));
  EXPECT_EQ(d.slides[1].slide_id, "P00_L1");
  EXPECT_EQ(d.slides[1].layer_index, 1);
  EXPECT_EQ(d.slides[0].spots[3].spot_id, "P00_L0_S003");
  EXPECT_EQ(d.counts.gene_names, (std::vector<std::string>{"ERBB2", "KRT19", "CD74", "TMSB10", "SYN004"}));
  const auto& img = d.image("P00_L0");
  for (const auto& s : d.slides[0].spots) {
    EXPECT_GE(s.center_x_px - 28, 0);
    EXPECT_LE(s.center_x_px + 28, img.width);
  }
}

TEST(Synth, ErbB2TracksItsMotif) {
  SynthConfig sc;
  SynthTruth truth;
  const auto d = synthesize_dataset(sc, &truth);
  ASSERT_EQ(truth.rates.rows(), d.n_spots());
  oracle::Vec motif, rate;
  for (int i = 0; i < truth.rates.rows(); ++i) motif.push_back(truth.motifs(i, 0)), rate.push_back(truth.rates(i, 0));
  EXPECT_GT(oracle::pearson(motif, rate), 0.99);
  EXPECT_DOUBLE_EQ(truth.strength[0], 4.0);
}

TEST(Synth, UncoupledGenesHaveNoStrength) {
  SynthConfig sc = fixtures::tiny_synth();
  sc.uncoupled_genes = 2;
  SynthTruth truth;
  synthesize_dataset(sc, &truth);
  EXPECT_EQ(truth.strength[3], 0.0);
  EXPECT_EQ(truth.strength[4], 0.0);
  EXPECT_GT(truth.strength[2], 0.0);
}

TEST(DatasetIo, RoundTripAndFingerprint) {
  fixtures::TempDir dir("io");
  const auto d = synthesize_dataset(fixtures::tiny_synth());
  write_dataset(d, dir.path());
  const auto back = load_dataset(dir.path());
  EXPECT_EQ(back.slides, d.slides);
  EXPECT_TRUE(back.counts == d.counts);
  EXPECT_EQ(back.image("P01_L1").pixels, d.image("P01_L1").pixels);
  const auto fp = dataset_fingerprint(dir.path());
  EXPECT_EQ(fp.size(), 64u);
  EXPECT_EQ(fp, dataset_fingerprint(dir.path()));
  write_file(dir / "counts.tsv", read_file(dir / "counts.tsv") + "\n");
  EXPECT_NE(fp, dataset_fingerprint(dir.path()));
}

TEST(DatasetIo, ErrorsNameFileAndLine) {
  fixtures::TempDir dir("bad");
  const auto d = synthesize_dataset(fixtures::tiny_synth());
  write_dataset(d, dir.path());
  auto counts = read_file(dir / "counts.tsv");
  const auto second = counts.find('\n', counts.find('\n') + 1);
  write_file(dir / "counts.tsv", counts.substr(0, second + 1) + "GHOST\t1\t2\t3\t4\t5\n" + counts.substr(second + 1));
  EXPECT_THROW(load_dataset(dir.path(), false), DataError);

  write_file(dir / "counts.tsv", counts);
  auto spots = read_file(dir / "spots.tsv");
  write_file(dir / "spots.tsv", spots + "P00_L0\tP00_L0_S999\tnot_a_number\t4\n");
  try {
    load_dataset(dir.path(), false);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("spots.tsv:"), std::string::npos) << e.what();
  }

  write_file(dir / "spots.tsv", spots + "P00_L0\tP00_L0_S999\t10\t10\n");
  try {
    load_dataset(dir.path(), false);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("P00_L0_S999"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MissingDirectoryIsAnIoError) {
  EXPECT_THROW(load_dataset("/nonexistent/hifusion"), IoError);
}
