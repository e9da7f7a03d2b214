#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tog {

// Organized depth in meters; 0 marks a missing sample.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<float> depth;

  DepthMap() = default;
  DepthMap(int h, int w) : height(h), width(w), depth(std::size_t(h) * w, 0.f) {}

  float At(int u, int v) const { return depth[std::size_t(v) * width + u]; }
  float& At(int u, int v) { return depth[std::size_t(v) * width + u]; }

  bool operator==(const DepthMap&) const = default;
};

// RTAD: "RTAD", u32 H, u32 W, f32[H*W] row-major.
DepthMap ReadDepthMap(const std::string& path);
void WriteDepthMap(const DepthMap& depth, const std::string& path);
DepthMap DecodeDepthMap(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> EncodeDepthMap(const DepthMap& depth);

}  // namespace tog
