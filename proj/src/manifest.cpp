#include "hifusion/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <fmt/format.h>

#include "hifusion/error.hpp"

#ifndef HIFUSION_VERSION
#define HIFUSION_VERSION "0.0.0"
#endif

namespace hifusion {

std::string code_version() { return HIFUSION_VERSION; }

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec);
}

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},
          {"config", config},
          {"seed", seed},
          {"dataset_fingerprint", dataset_fingerprint},
          {"code_version", code_version},
          {"started_at", started_at},
          {"finished_at", finished_at},
          {"extra", extra}};
}

RunManifest make_manifest(const std::string& command, const Config& config, const std::string& fingerprint) {
  RunManifest m;
  m.command = command;
  m.config = to_json(config);
  m.seed = config.train.seed;
  m.dataset_fingerprint = fingerprint;
  m.code_version = hifusion::code_version();
  m.started_at = utc_timestamp();
  return m;
}

void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.to_json().dump(2) << "\n";
}

RunManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
  const auto j = nlohmann::json::parse(in);
  RunManifest m;
  m.command = j.value("command", "");
  m.config = j.value("config", nlohmann::json::object());
  m.seed = j.value("seed", 0);
  m.dataset_fingerprint = j.value("dataset_fingerprint", "");
  m.code_version = j.value("code_version", "");
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  m.extra = j.value("extra", nlohmann::json::object());
  return m;
}

}  // namespace hifusion
