#include "hifusion/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include <toml.hpp>

#include "hifusion/error.hpp"

namespace hifusion {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};

std::string join_ints(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", \"" : "\"") + v[i] + "\"";
  return s + "]";
}

std::string fmt_double(double v) {
  std::string s = fmt::format("{}", v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

void one_of(const std::string& key, const std::string& value, std::initializer_list<const char*> allowed) {
  std::string list;
  for (const char* a : allowed) {
    if (value == a) return;
    list += (list.empty() ? "" : ", ") + std::string(a);
  }
  throw InvalidInput(key + " must be one of {" + list + "}, got \"" + value + "\"");
}

int parse_int(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw InvalidInput(key + ": expected an integer, got \"" + text + "\"");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw InvalidInput(key + ": expected a number, got \"" + text + "\"");
  return v;
}

std::vector<std::string> split_list(std::string text) {
  text.erase(std::remove_if(text.begin(), text.end(), [](char c) { return c == '[' || c == ']' || c == ' '; }),
             text.end());
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.size() >= 2 && item.front() == '"' && item.back() == '"') item = item.substr(1, item.size() - 2);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  auto add = [&](std::string section, std::string name, std::string help, std::function<FieldRef(Config&)> ref) {
    k.push_back({std::move(section), std::move(name), std::move(help), std::move(ref)});
  };
  // model
  add("model", "spot_size", "spot crop edge in pixels", [](Config& c) { return FieldRef(&c.model.spot_size); });
  add("model", "neighbor_n", "neighbor crop = spot_size * N", [](Config& c) { return FieldRef(&c.model.neighbor_n); });
  add("model", "levels", "decomposition grids, 1 first (subset of 1,2,4,7)",
      [](Config& c) { return FieldRef(&c.model.levels); });
  add("model", "encoder_depth", "spot encoder depth (10 or 18)", [](Config& c) { return FieldRef(&c.model.encoder_depth); });
  add("model", "width", "feature width d", [](Config& c) { return FieldRef(&c.model.width); });
  add("model", "encoder_stride", "spot encoder total stride (4, 8, 16, 32)",
      [](Config& c) { return FieldRef(&c.model.encoder_stride); });
  add("model", "region_depth", "region encoder depth (10 or 18)", [](Config& c) { return FieldRef(&c.model.region_depth); });
  add("model", "region_width", "region encoder width d' (projected to d when different)",
      [](Config& c) { return FieldRef(&c.model.region_width); });
  add("model", "region_stride", "region encoder total stride", [](Config& c) { return FieldRef(&c.model.region_stride); });
  add("model", "heads", "attention heads (must divide d)", [](Config& c) { return FieldRef(&c.model.heads); });
  add("model", "k", "token grid k (k*k keys/values)", [](Config& c) { return FieldRef(&c.model.k); });
  add("model", "fusion", "attention | additive", [](Config& c) { return FieldRef(&c.model.fusion); });
  add("model", "region_branch", "on | off", [](Config& c) { return FieldRef(&c.model.region_branch); });
  add("model", "qk_reversed", "none | ccf | input", [](Config& c) { return FieldRef(&c.model.qk_reversed); });
  add("model", "align_reduction", "sum | mean", [](Config& c) { return FieldRef(&c.model.align_reduction); });
  add("model", "ln_eps", "layer-norm epsilon", [](Config& c) { return FieldRef(&c.model.ln_eps); });
  add("model", "init_weights", "checkpoint whose encoder tensors replace the random init (empty = none)",
      [](Config& c) { return FieldRef(&c.model.init_weights); });
  // train
  add("train", "epochs", "training epochs", [](Config& c) { return FieldRef(&c.train.epochs); });
  add("train", "batch_size", "spots per step", [](Config& c) { return FieldRef(&c.train.batch_size); });
  add("train", "lr_init", "initial learning rate", [](Config& c) { return FieldRef(&c.train.lr_init); });
  add("train", "lr_min", "cosine floor", [](Config& c) { return FieldRef(&c.train.lr_min); });
  add("train", "weight_decay", "L2 decay on conv/linear weights", [](Config& c) { return FieldRef(&c.train.weight_decay); });
  add("train", "beta1", "Adam first-moment coefficient", [](Config& c) { return FieldRef(&c.train.beta1); });
  add("train", "beta2", "Adam second-moment coefficient", [](Config& c) { return FieldRef(&c.train.beta2); });
  add("train", "adam_eps", "Adam epsilon", [](Config& c) { return FieldRef(&c.train.adam_eps); });
  add("train", "lambda_align", "alignment loss weight (0 disables)", [](Config& c) { return FieldRef(&c.train.lambda_align); });
  add("train", "seed", "initialization and shuffling seed", [](Config& c) { return FieldRef(&c.train.seed); });
  add("train", "val_fraction", "patient-stratified validation share of training spots",
      [](Config& c) { return FieldRef(&c.train.val_fraction); });
  // data
  add("data", "dataset", "dataset root directory", [](Config& c) { return FieldRef(&c.data.dataset); });
  add("data", "top_genes", "genes kept by mean raw count", [](Config& c) { return FieldRef(&c.data.top_genes); });
  // eval
  add("eval", "protocol", "3d (sample-specific) | 2d (slide-wise CV)", [](Config& c) { return FieldRef(&c.eval.protocol); });
  add("eval", "folds", "cross-validation folds for 2d", [](Config& c) { return FieldRef(&c.eval.folds); });
  add("eval", "split_seed", "fold shuffling seed", [](Config& c) { return FieldRef(&c.eval.split_seed); });
  add("eval", "pcc_axis", "gene | spot", [](Config& c) { return FieldRef(&c.eval.pcc_axis); });
  add("eval", "markers", "genes reported individually", [](Config& c) { return FieldRef(&c.eval.markers); });
  return k;
}

void assign_from_toml(const ConfigKey& key, FieldRef ref, const toml::node& node, const std::string& path) {
  auto bad = [&](const char* want) { throw InvalidInput(path + ": expected " + std::string(want)); };
  std::visit(Overloaded{
                 [&](int* p) {
                   auto v = node.value<int64_t>();
                   if (!v || !node.is_integer()) bad("an integer");
                   *p = static_cast<int>(*v);
                 },
                 [&](double* p) {
                   if (!node.is_number()) bad("a number");
                   *p = *node.value<double>();
                 },
                 [&](std::string* p) {
                   if (!node.is_string()) bad("a string");
                   *p = *node.value<std::string>();
                 },
                 [&](std::vector<int>* p) {
                   const auto* arr = node.as_array();
                   if (!arr) bad("an array of integers");
                   p->clear();
                   for (const auto& e : *arr) {
                     if (!e.is_integer()) bad("an array of integers");
                     p->push_back(static_cast<int>(*e.value<int64_t>()));
                   }
                 },
                 [&](std::vector<std::string>* p) {
                   const auto* arr = node.as_array();
                   if (!arr) bad("an array of strings");
                   p->clear();
                   for (const auto& e : *arr) {
                     if (!e.is_string()) bad("an array of strings");
                     p->push_back(*e.value<std::string>());
                   }
                 },
             },
             ref);
  (void)key;
}

}  // namespace

FusionMode ModelConfig::fusion_mode() const {
  return fusion == "additive" ? FusionMode::kAdditive : FusionMode::kAttention;
}

QkReversed ModelConfig::qk_mode() const {
  if (qk_reversed == "ccf") return QkReversed::kCcf;
  if (qk_reversed == "input") return QkReversed::kInput;
  return QkReversed::kNone;
}

kernels::Reduction ModelConfig::reduction() const {
  return align_reduction == "sum" ? kernels::Reduction::kSum : kernels::Reduction::kMean;
}

Protocol EvalConfig::protocol_kind() const {
  return protocol == "2d" ? Protocol::kSlideWiseCv : Protocol::kSampleSpecific3d;
}

PccAxis EvalConfig::axis() const { return pcc_axis == "spot" ? PccAxis::kSpot : PccAxis::kGene; }

void Config::validate() const {
  const auto& m = model;
  require(m.spot_size > 0 && m.spot_size % 2 == 0, "model.spot_size must be positive and even");
  require(m.neighbor_n >= 1 && m.neighbor_n <= 5, "model.neighbor_n must be in 1..5");
  try {
    m.level_spec().validate(m.spot_size);
    m.spot_encoder().validate();
    m.region_encoder().validate();
  } catch (const InvalidInput& e) {
    throw InvalidInput(std::string("model: ") + e.what());
  }
  require(m.heads >= 1 && m.width % m.heads == 0, "model.heads must divide model.width");
  require(m.k >= 1, "model.k must be >= 1");
  one_of("model.fusion", m.fusion, {"attention", "additive"});
  one_of("model.region_branch", m.region_branch, {"on", "off"});
  one_of("model.qk_reversed", m.qk_reversed, {"none", "ccf", "input"});
  one_of("model.align_reduction", m.align_reduction, {"sum", "mean"});
  require(m.ln_eps > 0, "model.ln_eps must be positive");
  if (m.qk_mode() == QkReversed::kInput) {
    try {
      m.level_spec().validate(m.neighbor_size());
    } catch (const InvalidInput& e) {
      throw InvalidInput(std::string("model.qk_reversed = input: ") + e.what());
    }
  }
  const auto& t = train;
  require(t.epochs >= 1, "train.epochs must be >= 1");
  require(t.batch_size >= 1, "train.batch_size must be >= 1");
  require(t.lr_init > 0 && t.lr_min > 0 && t.lr_min < t.lr_init, "train: need 0 < lr_min < lr_init");
  require(t.weight_decay >= 0, "train.weight_decay must be >= 0");
  require(t.beta1 >= 0 && t.beta1 < 1 && t.beta2 >= 0 && t.beta2 < 1, "train: Adam betas must be in [0, 1)");
  require(t.adam_eps > 0, "train.adam_eps must be positive");
  require(t.lambda_align >= 0, "train.lambda_align must be >= 0");
  require(t.val_fraction >= 0 && t.val_fraction < 1, "train.val_fraction must be in [0, 1)");
  require(data.top_genes >= 1, "data.top_genes must be >= 1");
  one_of("eval.protocol", eval.protocol, {"3d", "2d"});
  one_of("eval.pcc_axis", eval.pcc_axis, {"gene", "spot"});
  require(eval.folds >= 2, "eval.folds must be >= 2");
}

Config Config::desk() {
  Config c;
  c.model.spot_size = 56;
  c.model.width = 32;
  c.model.encoder_stride = 8;
  c.model.region_width = 32;
  c.model.region_stride = 8;
  c.train.epochs = 80;
  c.train.batch_size = 16;
  c.train.lr_init = 1e-2;
  c.train.lr_min = 1e-5;
  c.data.top_genes = 8;
  return c;
}

std::string ConfigKey::flag() const {
  std::string f = name;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey* find_key(const std::string& section, const std::string& name) {
  for (const auto& k : config_keys())
    if (k.section == section && k.name == name) return &k;
  return nullptr;
}

const ConfigKey* find_flag(const std::string& flag_name) {
  for (const auto& k : config_keys())
    if (k.flag() == "--" + flag_name) return &k;
  return nullptr;
}

std::string field_to_string(const Config& config, const ConfigKey& key) {
  FieldRef ref = key.ref(const_cast<Config&>(config));
  return std::visit(Overloaded{
                        [](int* p) { return std::to_string(*p); },
                        [](double* p) { return fmt_double(*p); },
                        [](std::string* p) { return "\"" + *p + "\""; },
                        [](std::vector<int>* p) { return join_ints(*p); },
                        [](std::vector<std::string>* p) { return join_strings(*p); },
                    },
                    ref);
}

void field_from_string(Config& config, const ConfigKey& key, const std::string& text) {
  const std::string path = key.section + "." + key.name;
  std::visit(Overloaded{
                 [&](int* p) { *p = parse_int(path, text); },
                 [&](double* p) { *p = parse_double(path, text); },
                 [&](std::string* p) { *p = text; },
                 [&](std::vector<int>* p) {
                   p->clear();
                   for (const auto& s : split_list(text)) p->push_back(parse_int(path, s));
                 },
                 [&](std::vector<std::string>* p) { *p = split_list(text); },
             },
             key.ref(config));
}

Config parse_config(const std::string& toml_text, Config base, const std::string& origin) {
  toml::table tbl;
  try {
    tbl = toml::parse(toml_text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ":" << e.source().begin.line << ": " << e.description();
    throw InvalidInput(os.str());
  }
  for (const auto& [section_key, section_node] : tbl) {
    const std::string section(section_key.str());
    const auto* sec = section_node.as_table();
    if (!sec) throw InvalidInput(origin + ": unknown top-level key \"" + section + "\"");
    bool known_section = false;
    for (const auto& k : config_keys()) known_section |= k.section == section;
    if (!known_section) throw InvalidInput(origin + ": unknown section [" + section + "]");
    for (const auto& [name_key, node] : *sec) {
      const std::string name(name_key.str());
      const ConfigKey* key = find_key(section, name);
      if (!key) throw InvalidInput(origin + ": unknown key " + section + "." + name);
      assign_from_toml(*key, key->ref(base), node, origin + ": " + section + "." + name);
    }
  }
  return base;
}

Config load_config(const std::filesystem::path& path, Config base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base), path.string());
}

std::string to_toml(const Config& config) {
  std::string out;
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + k.section + "]\n";
      section = k.section;
    }
    out += k.name + " = " + field_to_string(config, k) + "\n";
  }
  return out;
}

nlohmann::json to_json(const Config& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& k : config_keys()) {
    FieldRef ref = k.ref(const_cast<Config&>(config));
    std::visit([&](auto* p) { j[k.section][k.name] = *p; }, ref);
  }
  return j;
}

Config config_from_json(const nlohmann::json& j) {
  Config c;
  for (const auto& k : config_keys()) {
    if (!j.contains(k.section) || !j[k.section].contains(k.name)) continue;
    const auto& v = j[k.section][k.name];
    std::visit([&](auto* p) { *p = v.get<std::remove_pointer_t<decltype(p)>>(); }, k.ref(c));
  }
  return c;
}

}  // namespace hifusion
