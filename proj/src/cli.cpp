#include "hifusion/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hifusion/config.hpp"
#include "hifusion/dataset.hpp"
#include "hifusion/error.hpp"
#include "hifusion/evaluation.hpp"
#include "hifusion/manifest.hpp"
#include "hifusion/plot.hpp"
#include "hifusion/training.hpp"

namespace hifusion {

namespace fs = std::filesystem;

namespace {

// Config-backed flags shared by train/eval/ablate/preprocess.
struct ConfigFlags {
  std::string config_file;
  std::string preset = "paper";
  std::map<const ConfigKey*, std::pair<CLI::Option*, std::string>> values;

  void attach(CLI::App* app, const std::set<std::string>& sections) {
    app->add_option("--config", config_file, "TOML config file (flags override it)");
    app->add_option("--preset", preset, "base settings before the config file: paper | desk")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    const Config defaults;
    for (const auto& key : config_keys()) {
      if (!sections.count(key.section)) continue;
      auto& slot = values[&key];
      const std::string desc =
          fmt::format("{}.{}: {} (default {})", key.section, key.name, key.help, field_to_string(defaults, key));
      slot.first = app->add_option(key.flag(), slot.second, desc);
    }
  }

  Config resolve() const {
    Config c = preset == "desk" ? Config::desk() : Config{};
    if (!config_file.empty()) c = load_config(config_file, c);
    for (const auto& [key, slot] : values)
      if (slot.first->count() > 0) field_from_string(c, *key, slot.second);
    c.validate();
    return c;
  }
};

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw InvalidInput(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw InvalidInput("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

std::string matrix_tsv(const std::vector<std::string>& ids, const std::vector<std::string>& genes,
                       const Eigen::MatrixXd& values) {
  std::string s = "spot_id";
  for (const auto& g : genes) s += "\t" + g;
  s += "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    s += ids[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < values.cols(); ++c) s += fmt::format("\t{:.9g}", values(r, c));
    s += "\n";
  }
  return s;
}

struct TsvMatrix {
  std::vector<std::string> ids, genes;
  Eigen::MatrixXd values;
};

TsvMatrix read_matrix_tsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  TsvMatrix m;
  std::string line;
  int line_no = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, '\t')) f.push_back(item);
    if (m.genes.empty()) {
      if (f.size() < 2 || f[0] != "spot_id") throw DataError(fmt::format("{}:{}: bad header", path.string(), line_no));
      m.genes.assign(f.begin() + 1, f.end());
      continue;
    }
    if (f.size() != m.genes.size() + 1)
      throw DataError(fmt::format("{}:{}: expected {} columns", path.string(), line_no, m.genes.size() + 1));
    m.ids.push_back(f[0]);
    std::vector<double> r;
    for (std::size_t j = 1; j < f.size(); ++j) {
      try {
        r.push_back(std::stod(f[j]));
      } catch (const std::exception&) {
        throw DataError(fmt::format("{}:{}: not a number: {}", path.string(), line_no, f[j]));
      }
    }
    rows.push_back(std::move(r));
  }
  m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.genes.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

Dataset require_dataset(const Config& c) {
  if (c.data.dataset.empty()) throw InvalidInput("--dataset is required");
  return load_dataset(c.data.dataset);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Training side of a fold: 3d uses every layer-0 slide, 2d the fold's training patients.
Fold training_fold(const Dataset& data, const Config& c, int fold_index) {
  if (c.eval.protocol_kind() == Protocol::kSampleSpecific3d) {
    const SplitPlan plan = make_splits(data.slides, Protocol::kSampleSpecific3d, c.eval.folds, c.eval.split_seed);
    Fold all;
    all.name = "layer0";
    for (const auto& f : plan.folds) {
      all.train_patients.insert(all.train_patients.end(), f.train_patients.begin(), f.train_patients.end());
      all.test_patients.insert(all.test_patients.end(), f.test_patients.begin(), f.test_patients.end());
      all.train_slides.insert(all.train_slides.end(), f.train_slides.begin(), f.train_slides.end());
      all.test_slides.insert(all.test_slides.end(), f.test_slides.begin(), f.test_slides.end());
    }
    return all;
  }
  const SplitPlan plan = make_splits(data.slides, Protocol::kSlideWiseCv, c.eval.folds, c.eval.split_seed);
  if (fold_index < 0 || fold_index >= static_cast<int>(plan.folds.size()))
    throw InvalidInput(fmt::format("--fold must be in 0..{}", plan.folds.size() - 1));
  return plan.folds[static_cast<std::size_t>(fold_index)];
}

std::vector<int> rows_of(const Dataset& data, const std::vector<std::string>& slide_ids) {
  const auto idx = data.counts.row_index();
  const std::set<std::string> wanted(slide_ids.begin(), slide_ids.end());
  std::vector<int> rows;
  for (const auto& s : data.slides)
    if (wanted.count(s.slide_id))
      for (const auto& sp : s.spots) rows.push_back(idx.at(sp.spot_id));
  return rows;
}

void print_markers(const MetricReport& report, const std::vector<std::string>& markers) {
  std::cout << marker_table_text(marker_gene_report(report, markers));
}

// ---------------------------------------------------------------- subcommands

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  if (a.cfg.genes < 1) throw InvalidInput("--genes must be >= 1");
  if (a.cfg.patients < 1 || a.cfg.layers < 1 || a.cfg.spots_per_slide < 1)
    throw InvalidInput("--patients, --layers and --spots must be >= 1");
  prepare_out_dir(a.out, a.force);
  const Dataset data = synthesize_dataset(a.cfg);
  write_dataset(data, a.out);
  const std::string fp = dataset_fingerprint(a.out);
  RunManifest m;
  m.command = "synth";
  m.seed = static_cast<int>(a.cfg.seed);
  m.dataset_fingerprint = fp;
  m.code_version = code_version();
  m.config = {{"patients", a.cfg.patients},         {"layers", a.cfg.layers},
              {"spots", a.cfg.spots_per_slide},     {"genes", a.cfg.genes},
              {"seed", a.cfg.seed},                 {"spot_size", a.cfg.spot_size},
              {"style_shift", a.cfg.style_shift},   {"uncoupled_genes", a.cfg.uncoupled_genes}};
  write_manifest(a.out, m);
  std::cout << fp << "\n";
  return kExitOk;
}

int cmd_preprocess(const ConfigFlags& flags, const std::string& out, const std::string& train_slides, bool force) {
  const Config c = flags.resolve();
  const Dataset data = require_dataset(c);
  std::vector<int> rows;
  if (!train_slides.empty()) rows = rows_of(data, split_commas(train_slides));
  const auto genes = select_top_genes(data.counts, c.data.top_genes, rows);
  prepare_out_dir(out, force);
  std::string gene_text;
  for (const auto& g : genes) gene_text += g + "\n";
  write_text(fs::path(out) / "genes.txt", gene_text);
  const ExpressionMatrix norm = normalize_expression(data.counts).select_genes(genes);
  write_text(fs::path(out) / "targets.tsv", matrix_tsv(norm.spot_ids, genes, norm.values));
  std::string crops = "spot_id\tslide_id\tspot_x0\tspot_y0\tspot_size\tneighbor_x0\tneighbor_y0\tneighbor_size\n";
  const int S = c.model.spot_size, NS = c.model.neighbor_size();
  for (const auto& s : data.slides)
    for (const auto& sp : s.spots)
      crops += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", sp.spot_id, s.slide_id, sp.center_x_px - S / 2,
                           sp.center_y_px - S / 2, S, sp.center_x_px - NS / 2, sp.center_y_px - NS / 2, NS);
  write_text(fs::path(out) / "crops.tsv", crops);
  RunManifest m = make_manifest("preprocess", c, dataset_fingerprint(c.data.dataset));
  m.finished_at = utc_timestamp();
  write_manifest(out, m);
  std::cout << fmt::format("selected {} of {} genes -> {}\n", genes.size(), data.counts.cols(), out);
  return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const std::string& out, int fold_index, bool force) {
  const Config c = flags.resolve();
  const Dataset data = require_dataset(c);
  const Fold fold = training_fold(data, c, fold_index);
  const auto genes = select_top_genes(data.counts, c.data.top_genes, rows_of(data, fold.train_slides));
  const ExpressionMatrix norm = normalize_expression(data.counts);
  const SpotSet set = make_spot_set(data, fold.train_slides, norm, genes);
  prepare_out_dir(out, force);
  const std::string fp = dataset_fingerprint(c.data.dataset);
  RunManifest manifest = make_manifest("train", c, fp);

  TrainOptions opts;
  opts.out_dir = out;
  opts.manifest_extra = {{"genes", genes},
                         {"dataset_fingerprint", fp},
                         {"split",
                          {{"protocol", c.eval.protocol},
                           {"fold", fold.name},
                           {"train_slides", fold.train_slides},
                           {"test_slides", fold.test_slides}}}};
  opts.on_epoch = [](int epoch, double tr, double val) {
    spdlog::info("epoch {:3d}  train total {:.5f}  selection {:.5f}", epoch, tr, val);
  };
  HiFusionModel model(c.model, static_cast<int>(genes.size()), static_cast<std::uint64_t>(c.train.seed));
  if (!c.model.init_weights.empty())
    spdlog::info("{} encoder tensors from {}", load_encoder_weights(model, c.model.init_weights), c.model.init_weights);
  TrainResult result;
  spdlog::info("training on {} spots from {} slides ({} genes)", set.size(), fold.train_slides.size(), genes.size());
  if (c.train.val_fraction > 0) {
    auto [tr, va] = split_validation(set, c.train.val_fraction, static_cast<std::uint64_t>(c.train.seed) + 101u);
    result = train(model, tr, &va, c.train, opts);
  } else {
    result = train(model, set, nullptr, c.train, opts);
  }
  std::string gene_text;
  for (const auto& g : genes) gene_text += g + "\n";
  write_text(fs::path(out) / "genes.txt", gene_text);
  write_text(fs::path(out) / "config.toml", to_toml(c));
  manifest.finished_at = utc_timestamp();
  manifest.extra = {{"best_epoch", result.best_epoch}, {"steps", result.steps.size()},
                    {"split", opts.manifest_extra.at("split")}};
  write_manifest(out, manifest);
  std::cout << fmt::format("trained {} steps; best epoch {}; checkpoints in {}\n", result.steps.size(),
                           result.best_epoch, out);
  return kExitOk;
}

int cmd_eval(const ConfigFlags& flags, const std::string& checkpoint, const std::string& out,
             const std::string& report_path, bool force) {
  Config c = flags.resolve();
  const Dataset data = require_dataset(c);
  prepare_out_dir(out, force);
  const fs::path report_file = report_path.empty() ? fs::path(out) / "report.json" : fs::path(report_path);
  RunManifest manifest = make_manifest("eval", c, dataset_fingerprint(c.data.dataset));
  MetricReport headline;
  nlohmann::json report_json;
  std::string tsv;
  if (!checkpoint.empty()) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    c.model = config_from_json(ck.manifest.at("config")).model;
    const auto genes = ck.manifest.at("genes").get<std::vector<std::string>>();
    const auto test_slides = ck.manifest.at("split").at("test_slides").get<std::vector<std::string>>();
    const ExpressionMatrix norm = normalize_expression(data.counts);
    std::map<std::string, std::vector<std::string>> by_patient;
    for (const auto& s : data.slides)
      if (std::find(test_slides.begin(), test_slides.end(), s.slide_id) != test_slides.end())
        by_patient[s.patient_id].push_back(s.slide_id);
    if (by_patient.empty()) throw DataError("none of the checkpoint's test slides are in the dataset");
    ProtocolReport pr;
    std::vector<std::string> all_ids;
    Eigen::MatrixXd all_pred(0, static_cast<Eigen::Index>(genes.size())), all_truth = all_pred;
    for (const auto& [patient, slides] : by_patient) {
      const SpotSet set = make_spot_set(data, slides, norm, genes);
      Eigen::MatrixXd pred(set.size(), static_cast<Eigen::Index>(genes.size()));
      for (int b = 0; b < set.size(); b += c.train.batch_size) {
        std::vector<int> idx;
        for (int i = b; i < std::min(set.size(), b + c.train.batch_size); ++i) idx.push_back(i);
        const Batch batch = make_batch(set, idx, c.model);
        const Tensor p = ck.model->predict(batch.spots, batch.neighbors);
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t g = 0; g < genes.size(); ++g) pred(idx[i], static_cast<Eigen::Index>(g)) = p[i * genes.size() + g];
      }
      pr.per_patient.push_back({patient, "checkpoint", compute_report(pred, set.targets, genes, c.eval.axis())});
      const Eigen::Index r0 = all_pred.rows();
      all_pred.conservativeResize(r0 + pred.rows(), Eigen::NoChange);
      all_truth.conservativeResize(r0 + pred.rows(), Eigen::NoChange);
      all_pred.bottomRows(pred.rows()) = pred;
      all_truth.bottomRows(pred.rows()) = set.targets;
      for (int i = 0; i < set.size(); ++i) all_ids.push_back(set.meta(i).spot_id);
    }
    std::vector<MetricReport> reps;
    for (const auto& p : pr.per_patient) reps.push_back(p.metrics);
    pr.average = average_reports(reps);
    headline = pr.average;
    report_json = pr.to_json();
    report_json["checkpoint"] = checkpoint;
    tsv = pr.summary_tsv();
    write_text(fs::path(out) / "predictions.tsv", matrix_tsv(all_ids, genes, all_pred));
    write_text(fs::path(out) / "truth.tsv", matrix_tsv(all_ids, genes, all_truth));
  } else {
    const SplitPlan plan =
        make_splits(data.slides, c.eval.protocol_kind(), c.eval.folds, static_cast<std::uint64_t>(c.eval.split_seed));
    ProtocolOptions opts;
    opts.top_genes = c.data.top_genes;
    opts.axis = c.eval.axis();
    opts.progress = [](const std::string& s) { spdlog::info("{}", s); };
    const ProtocolReport pr = run_protocol(hifusion_factory(c), data, plan, opts);
    headline = pr.average;
    report_json = pr.to_json();
    tsv = pr.summary_tsv();
  }
  report_json["markers"] = nlohmann::json::array();
  for (const auto& r : marker_gene_report(headline, c.eval.markers))
    report_json["markers"].push_back(
        {{"gene", r.gene}, {"present", r.present}, {"mse", r.mse}, {"mae", r.mae}, {"pcc", r.pcc}});
  if (report_file.has_parent_path()) fs::create_directories(report_file.parent_path());
  write_text(report_file, report_json.dump(2) + "\n");
  write_text(fs::path(out) / "report.tsv", tsv);
  manifest.finished_at = utc_timestamp();
  write_manifest(out, manifest);
  std::cout << tsv;
  print_markers(headline, c.eval.markers);
  return kExitOk;
}

int cmd_ablate(const ConfigFlags& flags, const std::string& axis, const std::string& out, bool smoke, bool force) {
  Config c = flags.resolve();
  if (smoke) c.train.epochs = 2;
  const Dataset data = require_dataset(c);
  std::vector<std::string> axes = axis == "all" ? ablation_axes() : std::vector<std::string>{axis};
  for (const auto& a : axes) ablation_values(a, c);  // reject unknown axes before any work
  prepare_out_dir(out, force);
  RunManifest manifest = make_manifest("ablate", c, dataset_fingerprint(c.data.dataset));
  manifest.extra = {{"axes", axes}, {"smoke", smoke}};
  for (const auto& a : axes) {
    const AblationTable t =
        run_ablation(a, c, data, hifusion_factory, [](const std::string& s) { spdlog::info("{}", s); });
    write_text(fs::path(out) / fmt::format("ablation_{}.json", a), t.to_json().dump(2) + "\n");
    write_text(fs::path(out) / fmt::format("ablation_{}.tsv", a), t.to_tsv());
    write_text(fs::path(out) / fmt::format("ablation_{}.txt", a), t.to_text());
    std::cout << t.to_text() << "\n";
  }
  manifest.finished_at = utc_timestamp();
  write_manifest(out, manifest);
  return kExitOk;
}

int cmd_plot(const std::string& dataset, const std::string& pred_path, const std::string& truth_path,
             const std::string& slide, const std::string& genes_arg, const std::string& out) {
  const Dataset data = load_dataset(dataset, false);
  const TsvMatrix pred = read_matrix_tsv(pred_path);
  const TsvMatrix truth = read_matrix_tsv(truth_path);
  const SlideRecord* rec = nullptr;
  for (const auto& s : data.slides)
    if (s.slide_id == slide) rec = &s;
  if (!rec) throw InvalidInput("unknown slide " + slide);
  std::vector<std::string> genes = genes_arg.empty() ? pred.genes : split_commas(genes_arg);
  auto column = [](const TsvMatrix& m, const std::string& g, const std::string& what) {
    auto it = std::find(m.genes.begin(), m.genes.end(), g);
    if (it == m.genes.end()) throw InvalidInput("gene " + g + " is not in the " + what + " set");
    return static_cast<Eigen::Index>(it - m.genes.begin());
  };
  std::map<std::string, Eigen::Index> prow, trow;
  for (std::size_t i = 0; i < pred.ids.size(); ++i) prow[pred.ids[i]] = static_cast<Eigen::Index>(i);
  for (std::size_t i = 0; i < truth.ids.size(); ++i) trow[truth.ids[i]] = static_cast<Eigen::Index>(i);
  PlotRequest req;
  req.genes = genes;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> rows;
  for (const auto& sp : rec->spots) {
    auto p = prow.find(sp.spot_id);
    auto t = trow.find(sp.spot_id);
    if (p == prow.end() || t == trow.end()) continue;
    req.coords.push_back({sp.center_x_px, sp.center_y_px});
    rows.push_back({p->second, t->second});
  }
  if (rows.empty()) throw InvalidInput("no predicted spots on slide " + slide);
  PlotSource gt{"Ground truth", Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(genes.size()))};
  PlotSource pr{"Prediction", gt.values};
  for (std::size_t g = 0; g < genes.size(); ++g) {
    const auto pc = column(pred, genes[g], "prediction");
    const auto tc = column(truth, genes[g], "ground-truth");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      pr.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) = pred.values(rows[i].first, pc);
      gt.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) = truth.values(rows[i].second, tc);
    }
  }
  req.sources = {gt, pr};
  std::vector<PanelInfo> info;
  const Rgb8Image img = render_expression_panels(req, &info);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_rgb8(out, img);
  for (const auto& p : info) std::cout << fmt::format("{}\t{}\t{}\n", p.gene, p.source, p.label);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"HiFusion: spot-level gene expression prediction from histology"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
  s->add_option("--patients", synth.cfg.patients, "patients")->capture_default_str();
  s->add_option("--layers", synth.cfg.layers, "tissue layers per patient")->capture_default_str();
  s->add_option("--spots", synth.cfg.spots_per_slide, "spots per slide")->capture_default_str();
  s->add_option("--genes", synth.cfg.genes, "genes")->capture_default_str();
  s->add_option("--seed", synth.cfg.seed, "generator seed")->capture_default_str();
  s->add_option("--spot-size", synth.cfg.spot_size, "spot crop size the geometry is scaled to")->capture_default_str();
  s->add_option("--style-shift", synth.cfg.style_shift, "per-patient stain/expression shift")->capture_default_str();
  s->add_option("--uncoupled-genes", synth.cfg.uncoupled_genes, "trailing genes with no image coupling")
      ->capture_default_str();
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_flag("--force", synth.force, "overwrite a non-empty output directory");

  ConfigFlags pre_flags, train_flags, eval_flags, ablate_flags;
  std::string pre_out, pre_train_slides, train_out, eval_out = "eval_out", eval_ckpt, eval_report, ablate_out,
                                                    ablate_axis;
  bool pre_force = false, train_force = false, eval_force = false, ablate_force = false, smoke = false;
  int fold = 0;

  auto* p = app.add_subcommand("preprocess", "select genes, normalize targets and index crops");
  pre_flags.attach(p, {"model", "train", "data", "eval"});
  p->add_option("--out", pre_out, "output directory")->required();
  p->add_option("--train-slides", pre_train_slides, "comma-separated slides used for gene selection (default all)");
  p->add_flag("--force", pre_force, "overwrite a non-empty output directory");

  auto* t = app.add_subcommand("train", "train one model on a protocol's training side");
  train_flags.attach(t, {"model", "train", "data", "eval"});
  t->add_option("--out", train_out, "run directory")->required();
  t->add_option("--fold", fold, "fold index for the 2d protocol")->capture_default_str();
  t->add_flag("--force", train_force, "overwrite a non-empty run directory");

  auto* e = app.add_subcommand("eval", "evaluate a checkpoint, or run a full protocol when none is given");
  eval_flags.attach(e, {"model", "train", "data", "eval"});
  e->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate on its held-out slides");
  e->add_option("--out", eval_out, "output directory")->capture_default_str();
  e->add_option("--report", eval_report, "report JSON path (default <out>/report.json)");
  e->add_flag("--force", eval_force, "overwrite a non-empty output directory");

  auto* a = app.add_subcommand("ablate", "run an ablation axis");
  ablate_flags.attach(a, {"model", "train", "data", "eval"});
  std::vector<std::string> axis_names = ablation_axes();
  axis_names.push_back("all");
  a->add_option("--axis", ablate_axis, "levels | feature_alignment | token_k | neighbor_N | region_branch | "
                                       "fusion_mode | qk_reversed | variants | all")
      ->required()
      ->check(CLI::IsMember(axis_names));
  a->add_option("--out", ablate_out, "output directory")->required();
  a->add_flag("--smoke", smoke, "2 epochs per configuration");
  a->add_flag("--force", ablate_force, "overwrite a non-empty output directory");

  std::string plot_dataset, plot_pred, plot_truth, plot_slide, plot_genes, plot_out;
  auto* pl = app.add_subcommand("plot", "render spatial expression maps");
  pl->add_option("--dataset", plot_dataset, "dataset root")->required();
  pl->add_option("--predictions", plot_pred, "predictions.tsv from eval")->required();
  pl->add_option("--truth", plot_truth, "truth.tsv from eval")->required();
  pl->add_option("--slide", plot_slide, "slide to draw")->required();
  pl->add_option("--genes", plot_genes, "comma-separated genes (default all)");
  pl->add_option("--out", plot_out, "PNG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*p) return cmd_preprocess(pre_flags, pre_out, pre_train_slides, pre_force);
    if (*t) return cmd_train(train_flags, train_out, fold, train_force);
    if (*e) return cmd_eval(eval_flags, eval_ckpt, eval_out, eval_report, eval_force);
    if (*a) return cmd_ablate(ablate_flags, ablate_axis, ablate_out, smoke, ablate_force);
    if (*pl) return cmd_plot(plot_dataset, plot_pred, plot_truth, plot_slide, plot_genes, plot_out);
  } catch (const InvalidInput& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& ex) {
    std::cerr << "numerical failure: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const IoError& ex) {
    std::cerr << "i/o error: " << ex.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"hifusion"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace hifusion
