#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "hifusion/config.hpp"

namespace hifusion {

std::string code_version();

struct RunManifest {
  std::string command;
  nlohmann::json config;
  int seed = 0;
  std::string dataset_fingerprint;
  std::string code_version;
  std::string started_at;
  std::string finished_at;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

RunManifest make_manifest(const std::string& command, const Config& config, const std::string& fingerprint);
std::string utc_timestamp();

// Writes <dir>/manifest.json, replacing any previous one.
void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& dir);

}  // namespace hifusion
