#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "hifusion/config.hpp"
#include "hifusion/dataset.hpp"

namespace fixtures {

// Removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hifusion_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline hifusion::SynthConfig tiny_synth(std::uint64_t seed = 1) {
  hifusion::SynthConfig s;
  s.patients = 2;
  s.layers = 2;
  s.spots_per_slide = 9;
  s.genes = 5;
  s.seed = seed;
  return s;
}

// Desk geometry with narrow encoders; fast enough for per-test training.
inline hifusion::Config tiny_config() {
  hifusion::Config c = hifusion::Config::desk();
  c.model.width = 16;
  c.model.region_width = 16;
  c.model.heads = 4;
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.data.top_genes = 5;
  return c;
}

}  // namespace fixtures
