#include "hifusion/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "hifusion/error.hpp"

namespace hifusion {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_shapes(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const char* what) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw InvalidInput(fmt::format("{}: prediction is {}x{} but truth is {}x{}", what, pred.rows(), pred.cols(),
                                   truth.rows(), truth.cols()));
  require(pred.rows() >= 1 && pred.cols() >= 1, std::string(what) + ": empty matrices");
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::ArrayXd dx = x.array() - x.mean(), dy = y.array() - y.mean();
  const double sxx = dx.square().sum(), syy = dy.square().sum();
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return std::clamp((dx * dy).sum() / std::sqrt(sxx * syy), -1.0, 1.0);
}

nlohmann::json nan_to_null(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
  return a;
}

nlohmann::json num(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

}  // namespace

// ---------------------------------------------------------------- metrics

double metric_mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  check_shapes(pred, truth, "metric_mse");
  return (pred - truth).array().square().mean();
}

double metric_mae(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  check_shapes(pred, truth, "metric_mae");
  return (pred - truth).array().abs().mean();
}

PccResult metric_pcc(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, PccAxis axis) {
  check_shapes(pred, truth, "metric_pcc");
  PccResult r;
  if (axis == PccAxis::kGene) {
    require(pred.rows() >= 2, "metric_pcc: need at least 2 spots");
    for (Eigen::Index j = 0; j < pred.cols(); ++j) r.values.push_back(pearson(pred.col(j), truth.col(j)));
  } else {
    require(pred.cols() >= 2, "metric_pcc: need at least 2 genes for per-spot correlation");
    for (Eigen::Index i = 0; i < pred.rows(); ++i)
      r.values.push_back(pearson(pred.row(i).transpose(), truth.row(i).transpose()));
  }
  double sum = 0;
  int n = 0;
  for (double v : r.values) {
    if (std::isnan(v)) {
      ++r.excluded;
    } else {
      sum += v;
      ++n;
    }
  }
  r.mean = n > 0 ? sum / n : kNaN;
  return r;
}

MetricReport compute_report(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                            const std::vector<std::string>& genes, PccAxis axis) {
  check_shapes(pred, truth, "compute_report");
  require(static_cast<Eigen::Index>(genes.size()) == pred.cols(), "compute_report: gene names do not match columns");
  MetricReport rep;
  rep.genes = genes;
  rep.n_spots = static_cast<int>(pred.rows());
  rep.mse = metric_mse(pred, truth);
  rep.mae = metric_mae(pred, truth);
  const PccResult pcc = metric_pcc(pred, truth, axis);
  rep.pcc = pcc.mean;
  rep.pcc_excluded = pcc.excluded;
  const PccResult per_gene = axis == PccAxis::kGene ? pcc : metric_pcc(pred, truth, PccAxis::kGene);
  rep.per_gene_pcc = per_gene.values;
  for (Eigen::Index j = 0; j < pred.cols(); ++j) {
    rep.per_gene_mse.push_back((pred.col(j) - truth.col(j)).array().square().mean());
    rep.per_gene_mae.push_back((pred.col(j) - truth.col(j)).array().abs().mean());
  }
  return rep;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"mse", num(mse)},       {"mae", num(mae)},       {"pcc", num(pcc)},
                      {"pcc_excluded", pcc_excluded}, {"n_spots", n_spots}, {"genes", genes}};
  j["per_gene"] = {{"mse", nan_to_null(per_gene_mse)},
                   {"mae", nan_to_null(per_gene_mae)},
                   {"pcc", nan_to_null(per_gene_pcc)}};
  return j;
}

MetricReport average_reports(const std::vector<MetricReport>& reports) {
  require(!reports.empty(), "average_reports: nothing to average");
  MetricReport out;
  double pcc_sum = 0;
  int pcc_n = 0;
  std::map<std::string, std::array<double, 3>> sums;
  std::map<std::string, std::array<int, 3>> counts;
  std::vector<std::string> order;
  for (const auto& r : reports) {
    out.mse += r.mse / static_cast<double>(reports.size());
    out.mae += r.mae / static_cast<double>(reports.size());
    if (std::isfinite(r.pcc)) {
      pcc_sum += r.pcc;
      ++pcc_n;
    }
    out.pcc_excluded += r.pcc_excluded;
    out.n_spots += r.n_spots;
    for (std::size_t g = 0; g < r.genes.size(); ++g) {
      const auto& name = r.genes[g];
      if (!sums.count(name)) {
        order.push_back(name);
        sums[name] = {0, 0, 0};
        counts[name] = {0, 0, 0};
      }
      const double vals[3] = {r.per_gene_mse[g], r.per_gene_mae[g], r.per_gene_pcc[g]};
      for (int k = 0; k < 3; ++k)
        if (std::isfinite(vals[k])) {
          sums[name][k] += vals[k];
          ++counts[name][k];
        }
    }
  }
  out.pcc = pcc_n > 0 ? pcc_sum / pcc_n : kNaN;
  out.genes = order;
  for (const auto& name : order) {
    auto avg = [&](int k) { return counts[name][k] > 0 ? sums[name][k] / counts[name][k] : kNaN; };
    out.per_gene_mse.push_back(avg(0));
    out.per_gene_mae.push_back(avg(1));
    out.per_gene_pcc.push_back(avg(2));
  }
  return out;
}

// ---------------------------------------------------------------- splits

nlohmann::json SplitPlan::to_json() const {
  nlohmann::json j;
  j["protocol"] = protocol == Protocol::kSlideWiseCv ? "2d" : "3d";
  j["folds"] = nlohmann::json::array();
  for (const auto& f : folds)
    j["folds"].push_back({{"name", f.name},
                          {"train_patients", f.train_patients},
                          {"test_patients", f.test_patients},
                          {"train_slides", f.train_slides},
                          {"test_slides", f.test_slides}});
  return j;
}

SplitPlan make_splits(const std::vector<SlideRecord>& slides, Protocol protocol, int n_folds, std::uint64_t seed) {
  std::map<std::string, std::vector<const SlideRecord*>> by_patient;
  for (const auto& s : slides) by_patient[s.patient_id].push_back(&s);
  std::vector<std::string> patients;
  for (const auto& [p, _] : by_patient) patients.push_back(p);

  SplitPlan plan;
  plan.protocol = protocol;
  if (protocol == Protocol::kSlideWiseCv) {
    require(n_folds >= 2, "slide-wise CV needs at least 2 folds");
    if (static_cast<int>(patients.size()) < n_folds)
      throw InvalidInput(fmt::format("slide-wise CV with {} folds needs at least {} patients, found {}", n_folds,
                                     n_folds, patients.size()));
    std::mt19937_64 rng(seed);
    std::vector<std::string> shuffled = patients;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<std::vector<std::string>> test(n_folds);
    for (std::size_t i = 0; i < shuffled.size(); ++i) test[i % n_folds].push_back(shuffled[i]);
    for (int f = 0; f < n_folds; ++f) {
      Fold fold;
      fold.name = fmt::format("fold{}", f);
      std::sort(test[f].begin(), test[f].end());
      fold.test_patients = test[f];
      const std::set<std::string> test_set(test[f].begin(), test[f].end());
      for (const auto& p : patients) {
        const bool is_test = test_set.count(p) > 0;
        if (!is_test) fold.train_patients.push_back(p);
        for (const auto* s : by_patient[p]) (is_test ? fold.test_slides : fold.train_slides).push_back(s->slide_id);
      }
      plan.folds.push_back(std::move(fold));
    }
  } else {
    for (const auto& p : patients) {
      Fold fold;
      fold.name = p;
      fold.train_patients = {p};
      fold.test_patients = {p};
      bool has_zero = false;
      for (const auto* s : by_patient[p]) {
        if (s->layer_index == 0) {
          fold.train_slides.push_back(s->slide_id);
          has_zero = true;
        } else {
          fold.test_slides.push_back(s->slide_id);
        }
      }
      if (!has_zero || fold.test_slides.empty())
        throw InvalidInput("sample-specific protocol needs layer 0 and at least one later layer for patient " + p);
      plan.folds.push_back(std::move(fold));
    }
  }
  return plan;
}

// ---------------------------------------------------------------- regressors

HiFusionRegressor::HiFusionRegressor(Config config, int genes, TrainOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  model_ = std::make_unique<HiFusionModel>(config_.model, genes, static_cast<std::uint64_t>(config_.train.seed));
  if (!config_.model.init_weights.empty()) load_encoder_weights(*model_, config_.model.init_weights);
}

void HiFusionRegressor::fit(const SpotSet& train_set) {
  if (config_.train.val_fraction > 0) {
    auto [tr, va] = split_validation(train_set, config_.train.val_fraction,
                                     static_cast<std::uint64_t>(config_.train.seed) + 101u);
    result_ = train(*model_, tr, &va, config_.train, options_);
  } else {
    result_ = train(*model_, train_set, nullptr, config_.train, options_);
  }
}

Eigen::MatrixXd HiFusionRegressor::predict(const SpotSet& test) {
  Eigen::MatrixXd out(test.size(), model_->genes());
  const int chunk = std::max(1, config_.train.batch_size);
  for (int b = 0; b < test.size(); b += chunk) {
    std::vector<int> idx;
    for (int i = b; i < std::min(test.size(), b + chunk); ++i) idx.push_back(i);
    Batch batch = make_batch(test, idx, config_.model);
    Tensor p = model_->predict(batch.spots, batch.neighbors, chunk);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int g = 0; g < model_->genes(); ++g) out(idx[i], g) = p[i * model_->genes() + g];
  }
  return out;
}

RegressorFactory hifusion_factory(const Config& config) {
  return [config](const Fold&, int genes) -> std::unique_ptr<Regressor> {
    return std::make_unique<HiFusionRegressor>(config, genes);
  };
}

// ---------------------------------------------------------------- protocol

ProtocolReport run_protocol(const RegressorFactory& factory, const Dataset& data, const SplitPlan& plan,
                            const ProtocolOptions& options) {
  require(!plan.folds.empty(), "run_protocol: empty split plan");
  const ExpressionMatrix normalized = normalize_expression(data.counts);
  const auto rows = data.counts.row_index();
  std::map<std::string, const SlideRecord*> slide_by_id;
  for (const auto& s : data.slides) slide_by_id[s.slide_id] = &s;

  ProtocolReport report;
  report.plan = plan;
  for (const auto& fold : plan.folds) {
    std::vector<int> train_rows;
    for (const auto& sid : fold.train_slides) {
      auto it = slide_by_id.find(sid);
      if (it == slide_by_id.end()) throw DataError("split references unknown slide " + sid);
      for (const auto& sp : it->second->spots) train_rows.push_back(rows.at(sp.spot_id));
    }
    require(!train_rows.empty(), "fold " + fold.name + " has no training spots");
    const int k = options.top_genes;
    const auto genes = select_top_genes(data.counts, k, train_rows);
    const SpotSet train_set = make_spot_set(data, fold.train_slides, normalized, genes);
    if (options.progress) options.progress(fmt::format("{}: training on {} spots", fold.name, train_set.size()));
    auto reg = factory(fold, static_cast<int>(genes.size()));
    reg->fit(train_set);
    for (const auto& patient : fold.test_patients) {
      std::vector<std::string> slides;
      for (const auto& sid : fold.test_slides)
        if (slide_by_id.at(sid)->patient_id == patient) slides.push_back(sid);
      const SpotSet test_set = make_spot_set(data, slides, normalized, genes);
      if (test_set.size() == 0) continue;
      const Eigen::MatrixXd pred = reg->predict(test_set);
      MetricReport m = compute_report(pred, test_set.targets, genes, options.axis);
      if (options.progress)
        options.progress(fmt::format("{}: patient {} mse {:.4f} mae {:.4f} pcc {:.4f}", fold.name, patient, m.mse,
                                     m.mae, m.pcc));
      report.per_patient.push_back({patient, fold.name, std::move(m)});
    }
  }
  std::sort(report.per_patient.begin(), report.per_patient.end(),
            [](const PatientReport& a, const PatientReport& b) { return a.patient < b.patient; });
  std::vector<MetricReport> all;
  for (const auto& p : report.per_patient) all.push_back(p.metrics);
  report.average = average_reports(all);
  return report;
}

nlohmann::json ProtocolReport::to_json() const {
  nlohmann::json j;
  j["split"] = plan.to_json();
  j["average"] = average.to_json();
  j["per_patient"] = nlohmann::json::array();
  for (const auto& p : per_patient) {
    auto pj = p.metrics.to_json();
    pj["patient"] = p.patient;
    pj["fold"] = p.fold;
    j["per_patient"].push_back(pj);
  }
  return j;
}

std::string ProtocolReport::summary_tsv() const {
  std::string s = "patient\tfold\tn_spots\tmse\tmae\tpcc\tpcc_excluded\n";
  for (const auto& p : per_patient)
    s += fmt::format("{}\t{}\t{}\t{:.6f}\t{:.6f}\t{:.6f}\t{}\n", p.patient, p.fold, p.metrics.n_spots, p.metrics.mse,
                     p.metrics.mae, p.metrics.pcc, p.metrics.pcc_excluded);
  s += fmt::format("average\t-\t{}\t{:.6f}\t{:.6f}\t{:.6f}\t{}\n", average.n_spots, average.mse, average.mae,
                   average.pcc, average.pcc_excluded);
  return s;
}

// ---------------------------------------------------------------- ablation

std::vector<std::string> ablation_axes() {
  return {"levels", "feature_alignment", "token_k", "neighbor_N", "region_branch", "fusion_mode", "qk_reversed",
          "variants"};
}

std::vector<AblationValue> ablation_values(const std::string& axis, const Config& base) {
  std::vector<AblationValue> out;
  auto with = [&](std::string label, auto&& edit) {
    Config c = base;
    edit(c);
    out.push_back({std::move(label), std::move(c)});
  };
  if (axis == "levels") {
    const std::vector<std::vector<int>> combos = {{1}, {1, 2}, {1, 4}, {1, 7}, {1, 2, 4}, {1, 2, 7}, {1, 4, 7}, {1, 2, 4, 7}};
    for (const auto& lv : combos) with(hism::LevelSpec{lv}.label(), [&](Config& c) { c.model.levels = lv; });
  } else if (axis == "feature_alignment") {
    with("w/o alignment", [](Config& c) { c.train.lambda_align = 0.0; });
    with("w/ alignment", [](Config& c) {
      if (c.train.lambda_align == 0.0) c.train.lambda_align = 1.0;
    });
  } else if (axis == "token_k") {
    for (int k = 2; k <= 7; ++k) with(fmt::format("{0}x{0}", k), [k](Config& c) { c.model.k = k; });
  } else if (axis == "neighbor_N") {
    for (int n = 1; n <= 5; ++n) {
      const int s = base.model.spot_size * n;
      with(fmt::format("{0}x{0}", s), [n](Config& c) { c.model.neighbor_n = n; });
    }
  } else if (axis == "region_branch") {
    with("on", [](Config& c) { c.model.region_branch = "on"; });
    with("off", [](Config& c) { c.model.region_branch = "off"; });
  } else if (axis == "fusion_mode") {
    with("attention", [](Config& c) { c.model.fusion = "attention"; });
    with("additive", [](Config& c) { c.model.fusion = "additive"; });
  } else if (axis == "qk_reversed") {
    with("none", [](Config& c) { c.model.qk_reversed = "none"; });
    with("ccf", [](Config& c) { c.model.qk_reversed = "ccf"; });
    with("input", [](Config& c) { c.model.qk_reversed = "input"; });
  } else if (axis == "variants") {
    with("HiFusion (full)", [](Config&) {});
    with("w/o Region Branch", [](Config& c) { c.model.region_branch = "off"; });
    with("CCF (Additive)", [](Config& c) { c.model.fusion = "additive"; });
    with("Q/K Reversed (CCF)", [](Config& c) { c.model.qk_reversed = "ccf"; });
    with("Q/K Reversed (Input)", [](Config& c) { c.model.qk_reversed = "input"; });
  } else {
    std::string known;
    for (const auto& a : ablation_axes()) known += (known.empty() ? "" : ", ") + a;
    throw InvalidInput("unknown ablation axis \"" + axis + "\" (known: " + known + ")");
  }
  for (const auto& v : out) v.config.validate();
  return out;
}

AblationTable run_ablation(const std::string& axis, const Config& base, const Dataset& data,
                           const FactoryMaker& make_factory, const std::function<void(const std::string&)>& progress) {
  const auto values = ablation_values(axis, base);
  AblationTable table;
  table.axis = axis;
  const SplitPlan plan = make_splits(data.slides, base.eval.protocol_kind(), base.eval.folds,
                                     static_cast<std::uint64_t>(base.eval.split_seed));
  for (const auto& v : values) {
    if (progress) progress(axis + " = " + v.label);
    ProtocolOptions opts;
    opts.top_genes = v.config.data.top_genes;
    opts.axis = v.config.eval.axis();
    opts.progress = progress;
    table.rows.push_back({v.label, run_protocol(make_factory(v.config), data, plan, opts)});
  }
  return table;
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json j;
  j["axis"] = axis;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json rj = r.report.to_json();
    rj["label"] = r.label;
    j["rows"].push_back(rj);
  }
  return j;
}

std::string AblationTable::to_tsv() const {
  std::string s = axis + "\tmse\tmae\tpcc\n";
  for (const auto& r : rows)
    s += fmt::format("{}\t{:.6f}\t{:.6f}\t{:.6f}\n", r.label, r.report.average.mse, r.report.average.mae,
                     r.report.average.pcc);
  return s;
}

std::string AblationTable::to_text() const {
  std::size_t w = axis.size();
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::string s = fmt::format("{:<{}}  {:>8}  {:>8}  {:>8}\n", axis, w, "MSE", "MAE", "PCC");
  s += std::string(w + 32, '-') + "\n";
  for (const auto& r : rows)
    s += fmt::format("{:<{}}  {:>8.4f}  {:>8.4f}  {:>8.4f}\n", r.label, w, r.report.average.mse, r.report.average.mae,
                     r.report.average.pcc);
  return s;
}

// ---------------------------------------------------------------- markers

std::vector<MarkerRow> marker_gene_report(const MetricReport& report, const std::vector<std::string>& genes) {
  std::vector<MarkerRow> rows;
  for (const auto& g : genes) {
    MarkerRow row;
    row.gene = g;
    auto it = std::find(report.genes.begin(), report.genes.end(), g);
    if (it != report.genes.end()) {
      const auto j = static_cast<std::size_t>(it - report.genes.begin());
      row.present = true;
      row.mse = report.per_gene_mse[j];
      row.mae = report.per_gene_mae[j];
      row.pcc = report.per_gene_pcc[j];
    }
    rows.push_back(row);
  }
  return rows;
}

std::string marker_table_text(const std::vector<MarkerRow>& rows) {
  std::string s = fmt::format("{:<10}  {:>8}  {:>8}  {:>8}\n", "gene", "MSE", "MAE", "PCC");
  for (const auto& r : rows) {
    if (!r.present)
      s += fmt::format("{:<10}  {:>8}  {:>8}  {:>8}\n", r.gene, "missing", "missing", "missing");
    else
      s += fmt::format("{:<10}  {:>8.4f}  {:>8.4f}  {:>8.4f}\n", r.gene, r.mse, r.mae, r.pcc);
  }
  return s;
}

}  // namespace hifusion
