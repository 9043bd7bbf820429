#include <gtest/gtest.h>

#include "hifusion/error.hpp"
#include "hifusion/evaluation.hpp"
#include "support/checks.hpp"
#include "support/fixtures.hpp"

using namespace hifusion;

namespace {

// Predicts the targets it is shown (perfect), remembering what fit saw.
class TruthRegressor : public Regressor {
 public:
  explicit TruthRegressor(std::vector<std::string>* seen) : seen_(seen) {}
  void fit(const SpotSet& train) override {
    for (int i = 0; i < train.size(); ++i) seen_->push_back(train.slide(i).slide_id);
  }
  Eigen::MatrixXd predict(const SpotSet& test) override { return test.targets; }

 private:
  std::vector<std::string>* seen_;
};

// Predicts the training mean for every spot.
class MeanRegressor : public Regressor {
 public:
  void fit(const SpotSet& train) override { mean_ = train.targets.colwise().mean(); }
  Eigen::MatrixXd predict(const SpotSet& test) override { return mean_.replicate(test.size(), 1); }

 private:
  Eigen::RowVectorXd mean_;
};

}  // namespace

TEST(Metrics, KnownValues) {
  Eigen::MatrixXd p(2, 2), t(2, 2);
  p << 1, 2, 3, 4;
  t << 1, 0, 5, 4;
  EXPECT_DOUBLE_EQ(metric_mse(p, t), 2.0);
  EXPECT_DOUBLE_EQ(metric_mae(p, t), 1.0);
  EXPECT_THROW(metric_mse(p, Eigen::MatrixXd(3, 2)), InvalidInput);
  const auto r = metric_pcc(p, p);
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(Metrics, ReportJsonUsesNullForExcluded) {
  Eigen::MatrixXd p(3, 2), t(3, 2);
  p << 1, 7, 2, 7, 3, 7;
  t << 1, 1, 2, 2, 4, 3;
  const auto rep = compute_report(p, t, {"G1", "G2"});
  EXPECT_EQ(rep.pcc_excluded, 1);
  EXPECT_EQ(rep.n_spots, 3);
  const auto j = rep.to_json();
  EXPECT_TRUE(j.at("per_gene").at("pcc").at(1).is_null()) << j.dump();
  EXPECT_NEAR(j.at("mse").get<double>(), rep.mse, 0);
}

TEST(Metrics, AverageMatchesGenesByName) {
  MetricReport a, b;
  a.genes = {"X", "Y"};
  a.per_gene_mse = {1, 2};
  a.per_gene_mae = {1, 2};
  a.per_gene_pcc = {0.5, 0.1};
  a.mse = 1.5, a.mae = 1.5, a.pcc = 0.3, a.n_spots = 10;
  b.genes = {"Y", "X"};
  b.per_gene_mse = {4, 3};
  b.per_gene_mae = {4, 3};
  b.per_gene_pcc = {0.3, std::numeric_limits<double>::quiet_NaN()};
  b.mse = 3.5, b.mae = 3.5, b.pcc = 0.3, b.n_spots = 20;
  const auto avg = average_reports({a, b});
  EXPECT_DOUBLE_EQ(avg.mse, 2.5);
  EXPECT_EQ(avg.n_spots, 30);
  ASSERT_EQ(avg.genes[0], "X");
  EXPECT_DOUBLE_EQ(avg.per_gene_mse[0], 2.0);
  EXPECT_DOUBLE_EQ(avg.per_gene_mse[1], 3.0);
  EXPECT_DOUBLE_EQ(avg.per_gene_pcc[0], 0.5);  // NaN skipped
  EXPECT_DOUBLE_EQ(avg.per_gene_pcc[1], 0.2);
}

TEST(Splits, SlideWiseIsDeterministicAndNamed) {
  std::mt19937_64 rng(2);
  const auto slides = checks::random_slides(rng, 9, 3);
  const auto a = make_splits(slides, Protocol::kSlideWiseCv, 4, 11);
  const auto b = make_splits(slides, Protocol::kSlideWiseCv, 4, 11);
  ASSERT_EQ(a.folds.size(), 4u);
  EXPECT_EQ(a.folds[2].name, "fold2");
  for (int f = 0; f < 4; ++f) EXPECT_EQ(a.folds[f].test_patients, b.folds[f].test_patients);
  std::size_t tested = 0;
  for (const auto& f : a.folds) {
    tested += f.test_patients.size();
    EXPECT_GE(f.test_patients.size(), 2u);
  }
  EXPECT_EQ(tested, 9u);
  EXPECT_EQ(checks::split_violation(slides, a), "");
  EXPECT_THROW(make_splits(slides, Protocol::kSlideWiseCv, 10, 0), InvalidInput);
}

TEST(Splits, SampleSpecificTrainsOnLayerZero) {
  const auto d = synthesize_dataset(fixtures::tiny_synth());
  const auto plan = make_splits(d.slides, Protocol::kSampleSpecific3d, 4, 0);
  ASSERT_EQ(plan.folds.size(), 2u);
  EXPECT_EQ(plan.folds[0].name, "P00");
  EXPECT_EQ(plan.folds[0].train_slides, (std::vector<std::string>{"P00_L0"}));
  EXPECT_EQ(plan.folds[0].test_slides, (std::vector<std::string>{"P00_L1"}));
  auto only_zero = d.slides;
  only_zero.erase(only_zero.begin() + 1);
  EXPECT_THROW(make_splits(only_zero, Protocol::kSampleSpecific3d, 0, 0), InvalidInput);
}

TEST(Protocol, PerfectRegressorAndTrainingIsolation) {
  const auto d = synthesize_dataset(fixtures::tiny_synth());
  std::vector<std::string> seen;
  const auto plan = make_splits(d.slides, Protocol::kSampleSpecific3d, 0, 0);
  ProtocolOptions opts;
  opts.top_genes = 3;
  const auto r = run_protocol([&](const Fold&, int genes) {
    EXPECT_EQ(genes, 3);
    return std::make_unique<TruthRegressor>(&seen);
  }, d, plan, opts);
  EXPECT_DOUBLE_EQ(r.average.mse, 0.0);
  EXPECT_NEAR(r.average.pcc, 1.0, 1e-12);
  ASSERT_EQ(r.per_patient.size(), 2u);
  EXPECT_EQ(r.average.genes.size(), 3u);
  for (const auto& s : seen) EXPECT_EQ(s.substr(s.size() - 2), "L0");
  const auto j = r.to_json();
  EXPECT_EQ(j.at("per_patient").size(), 2u);
  EXPECT_NE(r.summary_tsv().find("average"), std::string::npos);
}

TEST(Protocol, GenesAreChosenOnTrainingSpotsOnly) {
  auto d = synthesize_dataset(fixtures::tiny_synth());
  // Make gene 4 dominant on test slides only.
  for (const auto& s : d.slides) {
    if (s.layer_index == 0) continue;
    for (const auto& sp : s.spots) d.counts.values(d.counts.row_index().at(sp.spot_id), 4) = 100000;
  }
  const auto plan = make_splits(d.slides, Protocol::kSampleSpecific3d, 0, 0);
  ProtocolOptions opts;
  opts.top_genes = 1;
  const auto r = run_protocol([](const Fold&, int) { return std::make_unique<MeanRegressor>(); }, d, plan, opts);
  EXPECT_EQ(r.average.genes, (std::vector<std::string>{"ERBB2"}));
  opts.top_genes = 6;
  EXPECT_THROW(run_protocol([](const Fold&, int) { return std::make_unique<MeanRegressor>(); }, d, plan, opts),
               InvalidInput);
}

TEST(Ablation, AxesProduceTheExpectedRows) {
  const Config base = Config::desk();
  const auto expected = checks::expected_ablation_rows(base.model.spot_size);
  EXPECT_EQ(ablation_axes().size(), expected.size());
  for (const auto& axis : ablation_axes()) {
    ASSERT_TRUE(expected.count(axis)) << axis;
    EXPECT_EQ(checks::labels(axis, base), expected.at(axis)) << axis;
  }
  EXPECT_THROW(ablation_values("bogus", base), InvalidInput);
  const auto k = ablation_values("token_k", base);
  EXPECT_EQ(k.back().config.model.k, 7);
  const auto n = ablation_values("neighbor_N", base);
  EXPECT_EQ(n[4].config.model.neighbor_size(), 280);
  const auto v = ablation_values("variants", base);
  EXPECT_EQ(v[4].config.model.qk_reversed, "input");
  EXPECT_EQ(ablation_values("feature_alignment", base)[0].config.train.lambda_align, 0.0);
}

TEST(Ablation, RunsEveryRowWithAStubFactory) {
  const auto d = synthesize_dataset(fixtures::tiny_synth());
  Config base = fixtures::tiny_config();
  const auto t = run_ablation("token_k", base, d, [](const Config&) -> RegressorFactory {
    return [](const Fold&, int) { return std::make_unique<MeanRegressor>(); };
  });
  ASSERT_EQ(t.rows.size(), 6u);
  EXPECT_EQ(checks::table_problem(t, 5), "");
  EXPECT_NE(t.to_text().find("7x7"), std::string::npos);
  const std::string tsv = t.to_tsv();
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 7);
}

TEST(Markers, MissingGenesAreReported) {
  MetricReport r;
  r.genes = {"ERBB2", "CD74"};
  r.per_gene_mse = {0.1, 0.2};
  r.per_gene_mae = {0.3, 0.4};
  r.per_gene_pcc = {0.5, 0.6};
  const auto rows = marker_gene_report(r, {"ERBB2", "KRT19", "CD74"});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].present);
  EXPECT_FALSE(rows[1].present);
  EXPECT_DOUBLE_EQ(rows[2].pcc, 0.6);
  EXPECT_NE(marker_table_text(rows).find("missing"), std::string::npos);
}

TEST(HiFusionRegressor, FitsAndPredictsOnTinyData) {
  const auto d = synthesize_dataset(fixtures::tiny_synth());
  const Config c = fixtures::tiny_config();
  const auto plan = make_splits(d.slides, Protocol::kSampleSpecific3d, 0, 0);
  ProtocolOptions opts;
  opts.top_genes = 5;
  const auto r = run_protocol(hifusion_factory(c), d, plan, opts);
  EXPECT_TRUE(std::isfinite(r.average.mse));
  EXPECT_EQ(r.average.n_spots, 18);
}
