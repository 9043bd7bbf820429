#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hifusion/config.hpp"
#include "hifusion/dataset.hpp"
#include "hifusion/training.hpp"

namespace hifusion {

// Mean over all n*m entries.
double metric_mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);
double metric_mae(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);

struct PccResult {
  double mean = 0;              // over defined entries (NaN when none)
  std::vector<double> values;   // per gene (or per spot); NaN when excluded
  int excluded = 0;             // zero-variance columns/rows
};

// Pearson r per gene across spots (axis gene) or per spot across genes (axis spot).
PccResult metric_pcc(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, PccAxis axis = PccAxis::kGene);

struct MetricReport {
  double mse = 0, mae = 0, pcc = 0;
  int pcc_excluded = 0;
  int n_spots = 0;
  std::vector<std::string> genes;
  std::vector<double> per_gene_mse, per_gene_mae, per_gene_pcc;  // NaN pcc = excluded
  nlohmann::json to_json() const;
};

MetricReport compute_report(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                            const std::vector<std::string>& genes, PccAxis axis = PccAxis::kGene);

struct Fold {
  std::string name;
  std::vector<std::string> train_patients, test_patients;
  std::vector<std::string> train_slides, test_slides;
};

struct SplitPlan {
  Protocol protocol = Protocol::kSampleSpecific3d;
  std::vector<Fold> folds;
  nlohmann::json to_json() const;
};

// slide-wise CV: patients sorted, shuffled by `seed`, dealt round-robin.
// 3D: one fold per patient, layer 0 trains and layers >= 1 test.
SplitPlan make_splits(const std::vector<SlideRecord>& slides, Protocol protocol, int n_folds, std::uint64_t seed);

// A model under evaluation. `fit` sees only training spots.
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual void fit(const SpotSet& train) = 0;
  virtual Eigen::MatrixXd predict(const SpotSet& test) = 0;
};
using RegressorFactory = std::function<std::unique_ptr<Regressor>(const Fold& fold, int genes)>;

// Trains a fresh HiFusionModel per fold.
class HiFusionRegressor : public Regressor {
 public:
  HiFusionRegressor(Config config, int genes, TrainOptions options = {});
  void fit(const SpotSet& train) override;
  Eigen::MatrixXd predict(const SpotSet& test) override;
  HiFusionModel& model() { return *model_; }
  const TrainResult& result() const { return result_; }

 private:
  Config config_;
  std::unique_ptr<HiFusionModel> model_;
  TrainOptions options_;
  TrainResult result_;
};

RegressorFactory hifusion_factory(const Config& config);

struct PatientReport {
  std::string patient;
  std::string fold;
  MetricReport metrics;
};

struct ProtocolReport {
  SplitPlan plan;
  MetricReport average;  // per-patient average
  std::vector<PatientReport> per_patient;
  nlohmann::json to_json() const;
  std::string summary_tsv() const;
};

struct ProtocolOptions {
  int top_genes = 250;
  PccAxis axis = PccAxis::kGene;
  std::function<void(const std::string&)> progress;
};

// Per fold: genes chosen on training spots only, full-set normalization,
// fresh regressor, per-patient metrics on the held-out side.
ProtocolReport run_protocol(const RegressorFactory& factory, const Dataset& data, const SplitPlan& plan,
                            const ProtocolOptions& options);

// Averages per-patient reports; per-gene values are matched by gene name.
MetricReport average_reports(const std::vector<MetricReport>& reports);

// ---------------------------------------------------------------- ablation

struct AblationValue {
  std::string label;
  Config config;
};

// Known axes: levels, feature_alignment, token_k, neighbor_N, region_branch,
// fusion_mode, qk_reversed, variants.
std::vector<std::string> ablation_axes();
std::vector<AblationValue> ablation_values(const std::string& axis, const Config& base);

struct AblationRow {
  std::string label;
  ProtocolReport report;
};

struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;
  nlohmann::json to_json() const;
  std::string to_tsv() const;
  std::string to_text() const;
};

using FactoryMaker = std::function<RegressorFactory(const Config&)>;

AblationTable run_ablation(const std::string& axis, const Config& base, const Dataset& data,
                           const FactoryMaker& make_factory = hifusion_factory,
                           const std::function<void(const std::string&)>& progress = {});

// ---------------------------------------------------------------- markers

struct MarkerRow {
  std::string gene;
  bool present = false;
  double mse = 0, mae = 0, pcc = 0;
};

std::vector<MarkerRow> marker_gene_report(const MetricReport& report, const std::vector<std::string>& genes);
std::string marker_table_text(const std::vector<MarkerRow>& rows);

}  // namespace hifusion
