#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "tog/feature_map.h"

namespace tog::testing {

// Creates a fresh directory under the system temp dir; removed on scope exit.
class ScopedTempDir {
 public:
  ScopedTempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tog_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScopedTempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScopedTempDir(const ScopedTempDir&) = delete;
  ScopedTempDir& operator=(const ScopedTempDir&) = delete;

  std::string path() const { return path_.string(); }
  std::string File(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

// Gaussian features, unit-normalized, with each pixel masked with
// probability mask_ratio (no mask when mask_ratio >= 1).
inline FeatureMap RandomFeatureMap(std::mt19937_64& rng, int height, int width,
                                   int channels, double mask_ratio = 1.0) {
  std::normal_distribution<float> normal;
  std::bernoulli_distribution keep(std::min(mask_ratio, 1.0));
  std::vector<float> data(std::size_t(height) * width * channels);
  for (float& x : data) x = normal(rng);
  std::optional<std::vector<std::uint8_t>> mask;
  if (mask_ratio < 1.0) {
    mask.emplace(std::size_t(height) * width);
    for (auto& m : *mask) m = keep(rng) ? 1 : 0;
  }
  FeatureMap fm(height, width, channels, std::move(data), std::move(mask));
  fm.NormalizeInPlace();
  return fm;
}

}  // namespace tog::testing
