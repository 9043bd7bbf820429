#include "hifusion/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "hifusion/error.hpp"
#include "hifusion/ops.hpp"

namespace hifusion {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- losses

double main_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols() && pred.rows() > 0,
          "main_loss: shape mismatch");
  return (pred - target).rowwise().squaredNorm().sum() / static_cast<double>(pred.rows());
}

double aux_loss(const std::vector<Eigen::MatrixXd>& aux, const Eigen::MatrixXd& target) {
  require(!aux.empty(), "aux_loss: no auxiliary predictions");
  double s = 0;
  for (const auto& a : aux) s += main_loss(a, target);
  return s / static_cast<double>(aux.size());
}

LossBreakdown total_loss(double main, double aux, double align, double lambda) {
  return {main, aux, align, main + aux + lambda * align};
}

ag::Var main_loss(const ag::Var& pred, const Tensor& target) { return ops::mean_sq_norm(pred, target); }

ag::Var aux_loss(const std::vector<ag::Var>& aux, const Tensor& target) {
  require(!aux.empty(), "aux_loss: no auxiliary predictions");
  ag::Var s = ops::mean_sq_norm(aux[0], target);
  for (std::size_t i = 1; i < aux.size(); ++i) s = ops::add(s, ops::mean_sq_norm(aux[i], target));
  return ops::scale(s, 1.0f / static_cast<float>(aux.size()));
}

double cosine_lr(long step, long total_steps, double lr_init, double lr_min) {
  const long T = total_steps - 1;
  if (T <= 0) return lr_init;
  const double t = static_cast<double>(std::clamp(step, 0L, T));
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(T)));
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<nn::Parameter> params, const TrainConfig& config)
    : params_(std::move(params)),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps),
      weight_decay_(config.weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.value().numel(), 0.0f);
    v_.emplace_back(p.var.value().numel(), 0.0f);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& var = params_[i].var;
    const Tensor& g = var.grad();
    if (g.empty()) continue;
    auto w = var.mutable_value().data();
    const double wd = params_[i].decay ? weight_decay_ : 0.0;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + wd * w[j];
      m[j] = static_cast<float>(beta1_ * m[j] + (1 - beta1_) * gj);
      v[j] = static_cast<float>(beta2_ * v[j] + (1 - beta2_) * gj * gj);
      const double mh = m[j] / bc1, vh = v[j] / bc2;
      w[j] = static_cast<float>(w[j] - lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

// ---------------------------------------------------------------- data

SpotSet SpotSet::subset(const std::vector<int>& idx) const {
  SpotSet out;
  out.data = data;
  out.genes = genes;
  out.targets.resize(static_cast<Eigen::Index>(idx.size()), targets.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.spots.push_back(spots[idx[i]]);
    out.targets.row(static_cast<Eigen::Index>(i)) = targets.row(idx[i]);
  }
  return out;
}

SpotSet make_spot_set(const Dataset& data, const std::vector<std::string>& slide_ids,
                      const ExpressionMatrix& normalized, const std::vector<std::string>& genes) {
  require(normalized.space == ExpressionSpace::kNormalized, "make_spot_set: targets must be normalized");
  std::map<std::string, int> col;
  for (std::size_t i = 0; i < normalized.gene_names.size(); ++i) col[normalized.gene_names[i]] = static_cast<int>(i);
  std::vector<int> cols;
  for (const auto& g : genes) {
    auto it = col.find(g);
    if (it == col.end()) throw DataError("gene " + g + " is not in the expression matrix");
    cols.push_back(it->second);
  }
  const auto rows = normalized.row_index();
  std::set<std::string> wanted(slide_ids.begin(), slide_ids.end());
  SpotSet set;
  set.data = &data;
  set.genes = genes;
  std::vector<int> target_rows;
  for (std::size_t s = 0; s < data.slides.size(); ++s) {
    if (!wanted.count(data.slides[s].slide_id)) continue;
    const auto& spots = data.slides[s].spots;
    for (std::size_t j = 0; j < spots.size(); ++j) {
      auto it = rows.find(spots[j].spot_id);
      if (it == rows.end()) throw DataError("no expression row for spot " + spots[j].spot_id);
      set.spots.push_back({static_cast<int>(s), static_cast<int>(j), it->second});
      target_rows.push_back(it->second);
    }
  }
  set.targets.resize(static_cast<Eigen::Index>(target_rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < target_rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      set.targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          normalized.values(target_rows[i], cols[j]);
  return set;
}

Batch make_batch(const SpotSet& set, const std::vector<int>& idx, const ModelConfig& config) {
  require(!idx.empty(), "make_batch: empty batch");
  const bool need_neighbor = config.use_region() || config.qk_mode() == QkReversed::kInput;
  std::vector<Image> spots, neighbors;
  Batch b;
  b.targets = Tensor({static_cast<int>(idx.size()), static_cast<int>(set.targets.cols())});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& img = set.data->image(set.slide(idx[i]).slide_id);
    const auto& meta = set.meta(idx[i]);
    spots.push_back(crop_spot(img, meta, config.spot_size));
    if (need_neighbor) neighbors.push_back(crop_neighbor(img, meta, config.neighbor_size()));
    for (Eigen::Index g = 0; g < set.targets.cols(); ++g)
      b.targets[i * set.targets.cols() + g] = static_cast<float>(set.targets(idx[i], g));
  }
  b.spots = to_batch(spots);
  if (need_neighbor) b.neighbors = to_batch(neighbors);
  return b;
}

std::pair<SpotSet, SpotSet> split_validation(const SpotSet& set, double fraction, std::uint64_t seed) {
  std::map<std::string, std::vector<int>> by_patient;
  for (int i = 0; i < set.size(); ++i) by_patient[set.slide(i).patient_id].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<int> tr, va;
  for (auto& [patient, idx] : by_patient) {
    std::shuffle(idx.begin(), idx.end(), rng);
    int n_val = static_cast<int>(std::lround(fraction * static_cast<double>(idx.size())));
    if (fraction > 0 && idx.size() >= 2) n_val = std::max(n_val, 1);
    n_val = std::min<int>(n_val, static_cast<int>(idx.size()) - 1);
    for (std::size_t j = 0; j < idx.size(); ++j) (static_cast<int>(j) < n_val ? va : tr).push_back(idx[j]);
  }
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  return {set.subset(tr), set.subset(va)};
}

// ---------------------------------------------------------------- training loop

StepLoss compute_loss(HiFusionModel& model, const Batch& batch, double lambda, bool training) {
  StepLoss s;
  s.output = model.forward(ag::Var::constant(batch.spots),
                           batch.neighbors.empty() ? ag::Var() : ag::Var::constant(batch.neighbors), training);
  s.main = main_loss(s.output.prediction, batch.targets);
  s.aux = aux_loss(s.output.aux, batch.targets);
  s.total = ops::add(ops::add(s.main, s.aux), ops::scale(s.output.align_loss, static_cast<float>(lambda)));
  s.values = total_loss(s.main.item(), s.aux.item(), s.output.align_loss.item(), lambda);
  return s;
}

namespace {

std::string first_non_finite(HiFusionModel& model, const StepLoss& s) {
  for (const auto& p : model.state().params)
    if (!p.var.value().all_finite()) return "parameter " + p.name;
  if (!s.output.prediction.value().all_finite()) return "prediction";
  for (std::size_t i = 0; i < s.output.aux.size(); ++i)
    if (!s.output.aux[i].value().all_finite()) return "aux prediction " + std::to_string(i);
  if (!s.output.align_loss.value().all_finite()) return "alignment loss";
  if (!s.main.value().all_finite()) return "main loss";
  if (!s.aux.value().all_finite()) return "aux loss";
  return "total loss";
}

std::string first_non_finite_grad(const std::vector<nn::Parameter>& params) {
  for (const auto& p : params)
    if (!p.var.grad().empty() && !p.var.grad().all_finite()) return "gradient of " + p.name;
  return {};
}

double evaluate_main(HiFusionModel& model, const SpotSet& set, const ModelConfig& mc, int batch_size) {
  ag::NoGradGuard guard;
  double sum = 0;
  for (int b = 0; b < set.size(); b += batch_size) {
    std::vector<int> idx;
    for (int i = b; i < std::min(set.size(), b + batch_size); ++i) idx.push_back(i);
    Batch batch = make_batch(set, idx, mc);
    ModelOutput o = model.forward(ag::Var::constant(batch.spots),
                                  batch.neighbors.empty() ? ag::Var() : ag::Var::constant(batch.neighbors), false);
    sum += main_loss(o.prediction, batch.targets).item() * static_cast<double>(idx.size());
  }
  return sum / std::max(1, set.size());
}

}  // namespace

TrainResult train(HiFusionModel& model, const SpotSet& train_set, const SpotSet* val_set, const TrainConfig& config,
                  const TrainOptions& options) {
  require(train_set.size() > 0, "train: empty training split");
  require(static_cast<int>(train_set.targets.cols()) == model.genes(), "train: target width differs from model genes");
  const ModelConfig& mc = model.config();
  const int n = train_set.size();
  const int per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long total_steps = static_cast<long>(config.epochs) * per_epoch;

  std::vector<nn::Parameter> params = model.state().params;
  Adam adam(params, config);
  std::mt19937_64 rng(static_cast<std::uint64_t>(config.seed) * 7919u + 17u);

  std::ofstream log;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    log.open(options.out_dir / "metrics.jsonl");
    if (!log) throw IoError("cannot write " + (options.out_dir / "metrics.jsonl").string());
  }

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  long step = 0;
  std::vector<int> order(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0;
    for (int b = 0; b < n; b += config.batch_size, ++step) {
      std::vector<int> idx(order.begin() + b, order.begin() + std::min(n, b + config.batch_size));
      Batch batch = make_batch(train_set, idx, mc);
      StepLoss s = compute_loss(model, batch, config.lambda_align, true);
      if (!std::isfinite(s.values.total))
        throw NumericalError(fmt::format("non-finite loss at step {} (epoch {}); first non-finite tensor: {}", step,
                                         epoch, first_non_finite(model, s)));
      for (auto& p : params) p.var.zero_grad();
      ag::backward(s.total);
      if (auto bad = first_non_finite_grad(params); !bad.empty())
        throw NumericalError(fmt::format("non-finite gradient at step {} (epoch {}); first non-finite tensor: {}",
                                         step, epoch, bad));
      const double lr = cosine_lr(step, total_steps, config.lr_init, config.lr_min);
      adam.step(lr);
      StepRecord rec{step, epoch, lr, s.values};
      result.steps.push_back(rec);
      epoch_total += s.values.total;
      if (log.is_open()) {
        nlohmann::json j = {{"step", step},          {"epoch", epoch},          {"lr", lr},
                            {"main", rec.loss.main}, {"aux", rec.loss.aux},     {"align", rec.loss.align},
                            {"total", rec.loss.total}};
        log << j.dump() << "\n";
      }
      if (options.on_step) options.on_step(rec);
    }
    log.flush();
    double score = epoch_total / per_epoch;
    if (val_set && val_set->size() > 0) {
      score = evaluate_main(model, *val_set, mc, config.batch_size);
      result.val_main.push_back(score);
    }
    if (options.on_epoch) options.on_epoch(epoch, epoch_total / per_epoch, score);
    const bool improved = score < best;
    if (improved) {
      best = score;
      result.best_epoch = epoch;
    }
    if (!options.out_dir.empty() && options.checkpoints) {
      nlohmann::json extra = options.manifest_extra;
      extra["epoch"] = epoch;
      extra["selection_score"] = score;
      save_checkpoint(options.out_dir / fmt::format("epoch_{}.ckpt", epoch), model, extra);
      if (improved) save_checkpoint(options.out_dir / "best.ckpt", model, extra);
    }
  }
  return result;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'H', 'I', 'F', 'U', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint " + path);
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& path, HiFusionModel& model, const nlohmann::json& extra) {
  nlohmann::json manifest = extra;
  Config cfg;
  cfg.model = model.config();
  manifest["config"] = to_json(cfg);
  manifest["architecture_id"] = model.architecture_id();
  manifest["d"] = model.config().width;
  manifest["genes_out"] = model.genes();
  manifest["creation_seed"] = model.seed();
  const auto enc = model.config().spot_encoder();
  manifest["stage_schedule"] = {{"blocks", enc.blocks_per_stage()}, {"strides", enc.stage_strides()}};
  const std::string text = manifest.dump();

  nn::StateRefs refs = model.state();
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(refs.params.size() + refs.buffers.size()));
    auto write_tensor = [&](const std::string& name, const Tensor& t) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put<std::int32_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    };
    for (const auto& p : refs.params) write_tensor(p.name, p.var.value());
    for (const auto& b : refs.buffers) write_tensor(b.name, *b.tensor);
    if (!out) throw IoError("write failed for checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

namespace {

struct Archive {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Archive read_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path.string());
  if (version != kVersion) throw IoError(fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
  const auto len = get<std::uint64_t>(in, path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint " + path.string());
  Archive a;
  try {
    a.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad manifest: " + e.what());
  }
  const auto count = get<std::uint32_t>(in, path.string());
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = get<std::uint32_t>(in, path.string());
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const auto rank = get<std::uint32_t>(in, path.string());
    if (!in || rank > 8) throw IoError("truncated checkpoint " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = get<std::int32_t>(in, path.string());
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint " + path.string());
    a.tensors.emplace_back(std::move(name), std::move(t));
  }
  return a;
}

std::map<std::string, Tensor*> state_slots(HiFusionModel& model) {
  std::map<std::string, Tensor*> slots;
  nn::StateRefs refs = model.state();
  for (auto& p : refs.params) slots[p.name] = &p.var.mutable_value();
  for (auto& b : refs.buffers) slots[b.name] = b.tensor;
  return slots;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  Archive a = read_archive(path);
  LoadedCheckpoint out;
  out.manifest = std::move(a.manifest);
  try {
    const Config cfg = config_from_json(out.manifest.at("config"));
    out.model = std::make_unique<HiFusionModel>(cfg.model, out.manifest.at("genes_out").get<int>(),
                                                out.manifest.at("creation_seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad manifest: " + e.what());
  }
  auto slots = state_slots(*out.model);
  std::size_t filled = 0;
  for (auto& [name, t] : a.tensors) {
    auto it = slots.find(name);
    if (it == slots.end()) throw IoError(path.string() + ": unexpected tensor " + name);
    if (it->second->shape() != t.shape())
      throw IoError(fmt::format("{}: tensor {} has shape {}, model expects {}", path.string(), name,
                                shape_str(t.shape()), shape_str(it->second->shape())));
    *it->second = std::move(t);
    ++filled;
  }
  if (filled != slots.size())
    throw IoError(fmt::format("{}: {} of {} tensors present", path.string(), filled, slots.size()));
  return out;
}

int load_encoder_weights(HiFusionModel& model, const fs::path& path) {
  Archive a = read_archive(path);
  auto slots = state_slots(model);
  int copied = 0;
  for (auto& [name, t] : a.tensors) {
    if (name.rfind("spot_encoder.", 0) != 0 && name.rfind("region_encoder.", 0) != 0) continue;
    auto it = slots.find(name);
    if (it == slots.end()) continue;
    if (it->second->shape() != t.shape())
      throw InvalidInput(fmt::format("{}: encoder tensor {} has shape {}, model expects {}", path.string(), name,
                                     shape_str(t.shape()), shape_str(it->second->shape())));
    *it->second = std::move(t);
    ++copied;
  }
  if (copied == 0) throw InvalidInput(path.string() + ": no encoder tensors match this model");
  return copied;
}

}  // namespace hifusion
