#include <gtest/gtest.h>

#include "support/checks.hpp"

using namespace hifusion;

TEST(FormulaOracles, EveryFormulaWithinTolerance) {
  const auto e = checks::formula_oracle_errors(100, 77);
  ASSERT_EQ(e.max_rel.size(), 8u);
  for (const auto& [name, err] : e.max_rel) EXPECT_LT(err, 1e-10) << name;
}

TEST(FormulaOracles, PccExcludesZeroVarianceGenes) {
  Eigen::MatrixXd p(4, 3), t(4, 3);
  p << 1, 5, 2,  //
      2, 5, 1,   //
      3, 5, 4,   //
      4, 5, 3;
  t << 1, 1, 2,  //
      2, 2, 1,   //
      3, 3, 3,   //
      5, 4, 4;
  const auto r = metric_pcc(p, t, PccAxis::kGene);
  EXPECT_EQ(r.excluded, 1);
  EXPECT_TRUE(std::isnan(r.values[1]));
  int excluded = 0;
  EXPECT_NEAR(r.mean, oracle::pcc_gene_mean(p, t, &excluded), 1e-14);
  EXPECT_EQ(excluded, 1);
  const auto spot = metric_pcc(p.transpose(), t.transpose(), PccAxis::kSpot);
  EXPECT_NEAR(spot.mean, r.mean, 1e-14);
}

TEST(FormulaOracles, TotalLossIsAdditive) {
  const auto l = total_loss(1.5, 0.25, 2.0, 0.5);
  EXPECT_DOUBLE_EQ(l.total, 1.5 + 0.25 + 0.5 * 2.0);
  EXPECT_DOUBLE_EQ(total_loss(1.5, 0.25, 2.0, 0.0).total, 1.75);
}

TEST(FormulaOracles, FloatLossOpsMatchDouble) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd p = oracle::random_matrix(rng, 5, 3), t = oracle::random_matrix(rng, 5, 3);
  auto tensor = [](const Eigen::MatrixXd& m) {
    Tensor x({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) x[r * m.cols() + c] = static_cast<float>(m(r, c));
    return x;
  };
  EXPECT_NEAR(main_loss(ag::Var::constant(tensor(p)), tensor(t)).item(), oracle::main_loss(p, t), 1e-5);
  const std::vector<Eigen::MatrixXd> aux{p, t * 0.5};
  EXPECT_NEAR(aux_loss({ag::Var::constant(tensor(p)), ag::Var::constant(tensor(t * 0.5))}, tensor(t)).item(),
              oracle::aux_loss(aux, t), 1e-5);
}

TEST(GradientSuite, MatchesCentralDifferences) {
  const auto e = checks::gradient_errors(3);
  for (const char* name : {"alignment_loss", "fusion_alphas", "fusion_maps", "attention_wq", "attention_wk",
                           "attention_wv", "attention_wo", "attention_q", "attention_k", "attention_v", "head_x",
                           "head_gamma", "head_beta", "head_w", "head_b"}) {
    ASSERT_TRUE(e.rel.count(name)) << name;
    EXPECT_LT(e.rel.at(name), 1e-5) << name;
  }
}

TEST(Invariants, AllHold) {
  const auto r = checks::invariants(4);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Invariants, SplitFuzzDetectsABrokenPlan) {
  std::mt19937_64 rng(1);
  const auto slides = checks::random_slides(rng, 5, 3);
  auto plan = make_splits(slides, Protocol::kSlideWiseCv, 2, 0);
  EXPECT_EQ(checks::split_violation(slides, plan), "");
  plan.folds[0].train_slides.push_back(plan.folds[0].test_slides.front());
  EXPECT_NE(checks::split_violation(slides, plan), "");
  auto plan3 = make_splits(slides, Protocol::kSampleSpecific3d, 0, 0);
  EXPECT_EQ(checks::split_violation(slides, plan3), "");
  std::swap(plan3.folds[0].train_slides.front(), plan3.folds[0].test_slides.front());
  EXPECT_NE(checks::split_violation(slides, plan3), "");
}
