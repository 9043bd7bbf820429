#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hifusion/config.hpp"
#include "hifusion/dataset.hpp"
#include "hifusion/model.hpp"

namespace hifusion {

struct LossBreakdown {
  double main = 0, aux = 0, align = 0, total = 0;
};

// (1/n) sum_i ||pred_i - target_i||^2
double main_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
// (1/(L n)) sum_s sum_i ||aux_s,i - target_i||^2
double aux_loss(const std::vector<Eigen::MatrixXd>& aux, const Eigen::MatrixXd& target);
LossBreakdown total_loss(double main, double aux, double align, double lambda);

ag::Var main_loss(const ag::Var& pred, const Tensor& target);
ag::Var aux_loss(const std::vector<ag::Var>& aux, const Tensor& target);

// lr_min + (lr_init - lr_min)(1 + cos(pi t / T)) / 2 with T = total_steps - 1.
double cosine_lr(long step, long total_steps, double lr_init, double lr_min);

// Adam with L2 decay added to the gradient of `decay` parameters.
class Adam {
 public:
  Adam(std::vector<nn::Parameter> params, const TrainConfig& config);
  void step(double lr);
  long steps() const { return t_; }
  const std::vector<nn::Parameter>& params() const { return params_; }

 private:
  std::vector<nn::Parameter> params_;
  std::vector<std::vector<float>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
};

// Spots drawn from a dataset with their normalized, gene-selected targets.
struct SpotSet {
  const Dataset* data = nullptr;
  std::vector<SpotRef> spots;
  Eigen::MatrixXd targets;  // rows aligned with `spots`
  std::vector<std::string> genes;

  int size() const { return static_cast<int>(spots.size()); }
  const SlideRecord& slide(int i) const { return data->slides[spots[i].slide]; }
  const SpotMeta& meta(int i) const { return slide(i).spots[spots[i].spot]; }
  SpotSet subset(const std::vector<int>& idx) const;
};

// Rows of `data` on the given slides, targets from `normalized` restricted to `genes`.
SpotSet make_spot_set(const Dataset& data, const std::vector<std::string>& slide_ids,
                      const ExpressionMatrix& normalized, const std::vector<std::string>& genes);

struct Batch {
  Tensor spots;      // [B, 3, S, S]
  Tensor neighbors;  // [B, 3, S*N, S*N] (empty when unused)
  Tensor targets;    // [B, m]
};

Batch make_batch(const SpotSet& set, const std::vector<int>& idx, const ModelConfig& config);

// Within each patient, a `fraction` share of spots (at least one when the
// patient has two or more) goes to validation.
std::pair<SpotSet, SpotSet> split_validation(const SpotSet& set, double fraction, std::uint64_t seed);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0;
  LossBreakdown loss;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files
  bool checkpoints = true;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(int epoch, double train_total, double val_main)> on_epoch;
  nlohmann::json manifest_extra;  // merged into checkpoint manifests
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> val_main;  // per epoch (empty without a validation set)
  int best_epoch = 0;
};

// Forward + composite loss for one batch; `lambda` weights the alignment term.
struct StepLoss {
  ModelOutput output;
  ag::Var main, aux, total;
  LossBreakdown values;
};
StepLoss compute_loss(HiFusionModel& model, const Batch& batch, double lambda, bool training);

TrainResult train(HiFusionModel& model, const SpotSet& train_set, const SpotSet* val_set, const TrainConfig& config,
                  const TrainOptions& options = {});

// Binary archive: "HIFUCKPT", JSON manifest, named float tensors.
void save_checkpoint(const std::filesystem::path& path, HiFusionModel& model, const nlohmann::json& extra = {});
struct LoadedCheckpoint {
  std::unique_ptr<HiFusionModel> model;
  nlohmann::json manifest;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Copies the spot/region encoder tensors of a checkpoint into `model`
// (names and shapes must match). Returns the number of tensors copied.
int load_encoder_weights(HiFusionModel& model, const std::filesystem::path& path);

}  // namespace hifusion
