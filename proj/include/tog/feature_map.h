#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tog/geometry.h"

namespace tog {

using FeatureVector = Eigen::VectorXf;

// Dense H x W x C per-pixel features with an optional object mask.
//
// Storage is row-major: v-major, then u, then channel. Feature grids may be
// coarser than the image they describe; `image_to_feature` holds the per-axis
// factor (feature_dim / image_dim) used to map image pixels into the grid.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels);
  FeatureMap(int height, int width, int channels, std::vector<float> data,
             std::optional<std::vector<std::uint8_t>> mask = std::nullopt);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t num_pixels() const {
    return static_cast<std::size_t>(height_) * width_;
  }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  bool has_mask() const { return mask_.has_value(); }
  const std::optional<std::vector<std::uint8_t>>& mask() const { return mask_; }
  void set_mask(std::optional<std::vector<std::uint8_t>> mask);
  // Without a mask every pixel counts as object.
  bool InMask(int u, int v) const;

  Eigen::Map<const FeatureVector> At(int u, int v) const {
    return {data_.data() + Offset(u, v), channels_};
  }
  Eigen::Map<FeatureVector> At(int u, int v) {
    return {data_.data() + Offset(u, v), channels_};
  }

  // Grid positions (u, v) of masked pixels in raster order.
  std::vector<Eigen::Vector2i> MaskedPixels() const;

  // Per-pixel L2 normalization; zero vectors are left at zero.
  void NormalizeInPlace();

  void SetImageSize(int image_width, int image_height);
  Eigen::Vector2d image_to_feature() const { return image_to_feature_; }
  Pixeld ImageToFeature(const Pixeld& image_px) const {
    return image_px.cwiseProduct(image_to_feature_);
  }
  Pixeld FeatureToImage(const Pixeld& feature_px) const {
    return feature_px.cwiseQuotient(image_to_feature_);
  }

  bool operator==(const FeatureMap& other) const;

 private:
  std::size_t Offset(int u, int v) const {
    return (static_cast<std::size_t>(v) * width_ + u) * channels_;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
  std::optional<std::vector<std::uint8_t>> mask_;
  Eigen::Vector2d image_to_feature_ = Eigen::Vector2d::Ones();
};

enum class Modality : std::uint8_t { kImage = 0, kText = 1 };

struct EmbeddingVector {
  Eigen::VectorXf values;
  Modality modality = Modality::kImage;

  bool operator==(const EmbeddingVector& other) const {
    return modality == other.modality && values.size() == other.values.size() &&
           values == other.values;
  }
};

// RTAF: "RTAF", u32 version=1, u32 H, u32 W, u32 C, u8 has_mask,
// f32[H*W*C], then u8[H*W] mask if present. Little-endian.
FeatureMap ReadFeatureMap(const std::string& path);
void WriteFeatureMap(const FeatureMap& fm, const std::string& path);
FeatureMap DecodeFeatureMap(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> EncodeFeatureMap(const FeatureMap& fm);

// RTAE: "RTAE", u32 length, u8 modality, f32[length]. Normalized on read.
EmbeddingVector ReadEmbedding(const std::string& path);
void WriteEmbedding(const EmbeddingVector& e, const std::string& path);
EmbeddingVector DecodeEmbedding(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> EncodeEmbedding(const EmbeddingVector& e);

// Bilinear lookup at an image-space pixel, re-normalized to unit length.
FeatureVector SampleFeature(const FeatureMap& fm, const Pixeld& image_px);

template <typename DerivedA, typename DerivedB>
double CosineSimilarity(const Eigen::MatrixBase<DerivedA>& a,
                        const Eigen::MatrixBase<DerivedB>& b) {
  const double na = a.template cast<double>().norm();
  const double nb = b.template cast<double>().norm();
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorCode::kZeroVector, "cosine similarity of a zero vector");
  }
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "vector lengths differ");
  }
  return a.template cast<double>().dot(b.template cast<double>()) / (na * nb);
}

}  // namespace tog
