#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "hifusion/encoders.hpp"
#include "hifusion/hism.hpp"

namespace hifusion {

enum class FusionMode { kAttention, kAdditive };
enum class QkReversed { kNone, kCcf, kInput };
enum class Protocol { kSampleSpecific3d, kSlideWiseCv };
enum class PccAxis { kGene, kSpot };

struct ModelConfig {
  int spot_size = 224;
  int neighbor_n = 2;  // neighbor crop = spot_size * neighbor_n
  std::vector<int> levels{1, 2, 7};
  int encoder_depth = 18;
  int width = 512;
  int encoder_stride = 32;
  int region_depth = 10;
  int region_width = 512;
  int region_stride = 32;
  int heads = 4;
  int k = 2;
  std::string fusion = "attention";      // attention | additive
  std::string region_branch = "on";      // on | off
  std::string qk_reversed = "none";      // none | ccf | input
  std::string align_reduction = "mean";  // sum | mean
  double ln_eps = 1e-5;
  std::string init_weights;  // checkpoint seeding the encoders; empty = random init

  int neighbor_size() const { return spot_size * neighbor_n; }
  FusionMode fusion_mode() const;
  QkReversed qk_mode() const;
  bool use_region() const { return region_branch == "on"; }
  kernels::Reduction reduction() const;
  hism::LevelSpec level_spec() const { return {levels}; }
  EncoderConfig spot_encoder() const { return {encoder_depth, width, encoder_stride}; }
  EncoderConfig region_encoder() const { return {region_depth, region_width, region_stride}; }
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double lr_init = 3e-4;
  double lr_min = 1e-6;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda_align = 1.0;
  int seed = 0;
  double val_fraction = 0.1;
};

struct DataConfig {
  std::string dataset;
  int top_genes = 250;
};

struct EvalConfig {
  std::string protocol = "3d";  // 3d | 2d
  int folds = 4;
  int split_seed = 0;
  std::string pcc_axis = "gene";  // gene | spot
  std::vector<std::string> markers{"ERBB2", "KRT19", "CD74", "TMSB10"};

  Protocol protocol_kind() const;
  PccAxis axis() const;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  // Throws InvalidInput naming the first offending key.
  void validate() const;

  // Small-image settings for single-core runs: spot 56, neighbor 112, stride-8
  // encoders. Keeps the 7x7 / 4x4 / 1x1 per-level grid arithmetic.
  static Config desk();
};

using FieldRef = std::variant<int*, double*, std::string*, std::vector<int>*, std::vector<std::string>*>;

struct ConfigKey {
  std::string section;
  std::string name;
  std::string help;
  std::function<FieldRef(Config&)> ref;

  std::string flag() const;  // "--" + name with '_' -> '-'
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_key(const std::string& section, const std::string& name);
const ConfigKey* find_flag(const std::string& flag_name);  // name without leading dashes

std::string field_to_string(const Config& config, const ConfigKey& key);
void field_from_string(Config& config, const ConfigKey& key, const std::string& text);

// Unknown sections or keys are rejected with their dotted path.
Config load_config(const std::filesystem::path& path, Config base = {});
Config parse_config(const std::string& toml_text, Config base = {}, const std::string& origin = "<string>");
std::string to_toml(const Config& config);

nlohmann::json to_json(const Config& config);
Config config_from_json(const nlohmann::json& j);

}  // namespace hifusion
