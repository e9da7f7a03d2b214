#include "tog/feature_map.h"

#include <cmath>

#include "binary_io.h"

namespace tog {
namespace {

constexpr std::uint32_t kFeatureMapVersion = 1;

// Leaves vectors that are already unit length (to float precision) untouched
// so normalization is idempotent bit-for-bit.
template <typename Derived>
void NormalizeVector(Eigen::MatrixBase<Derived>& v) {
  const double norm = v.template cast<double>().norm();
  if (norm == 0.0 || std::abs(norm - 1.0) < 1e-7) {
    return;
  }
  v = (v.template cast<double>() / norm).template cast<float>();
}

}  // namespace

FeatureMap::FeatureMap(int height, int width, int channels)
    : FeatureMap(height, width, channels,
                 std::vector<float>(std::size_t(height) * width * channels,
                                    0.f)) {}

FeatureMap::FeatureMap(int height, int width, int channels,
                       std::vector<float> data,
                       std::optional<std::vector<std::uint8_t>> mask)
    : height_(height), width_(width), channels_(channels),
      data_(std::move(data)) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw Error(ErrorCode::kDimensionMismatch, "feature map dims must be > 0");
  }
  if (data_.size() != std::size_t(height) * width * channels) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature data length != height * width * channels");
  }
  set_mask(std::move(mask));
}

void FeatureMap::set_mask(std::optional<std::vector<std::uint8_t>> mask) {
  if (mask && mask->size() != num_pixels()) {
    throw Error(ErrorCode::kDimensionMismatch, "mask size != height * width");
  }
  mask_ = std::move(mask);
}

bool FeatureMap::InMask(int u, int v) const {
  if (u < 0 || v < 0 || u >= width_ || v >= height_) return false;
  return !mask_ || (*mask_)[std::size_t(v) * width_ + u] != 0;
}

std::vector<Eigen::Vector2i> FeatureMap::MaskedPixels() const {
  std::vector<Eigen::Vector2i> pixels;
  for (int v = 0; v < height_; ++v) {
    for (int u = 0; u < width_; ++u) {
      if (InMask(u, v)) pixels.emplace_back(u, v);
    }
  }
  return pixels;
}

void FeatureMap::NormalizeInPlace() {
  for (int v = 0; v < height_; ++v) {
    for (int u = 0; u < width_; ++u) {
      auto f = At(u, v);
      NormalizeVector(f);
    }
  }
}

void FeatureMap::SetImageSize(int image_width, int image_height) {
  if (image_width <= 0 || image_height <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "image size must be > 0");
  }
  image_to_feature_ = Eigen::Vector2d(double(width_) / image_width,
                                      double(height_) / image_height);
}

bool FeatureMap::operator==(const FeatureMap& other) const {
  return height_ == other.height_ && width_ == other.width_ &&
         channels_ == other.channels_ && data_ == other.data_ &&
         mask_ == other.mask_;
}

std::vector<std::uint8_t> EncodeFeatureMap(const FeatureMap& fm) {
  internal::ByteWriter w;
  w.Magic("RTAF");
  w.U32(kFeatureMapVersion);
  w.U32(static_cast<std::uint32_t>(fm.height()));
  w.U32(static_cast<std::uint32_t>(fm.width()));
  w.U32(static_cast<std::uint32_t>(fm.channels()));
  w.U8(fm.has_mask() ? 1 : 0);
  w.F32(fm.data());
  if (fm.has_mask()) {
    w.Bytes(*fm.mask());
  }
  return w.Take();
}

FeatureMap DecodeFeatureMap(std::span<const std::uint8_t> bytes) {
  internal::ByteReader r(bytes);
  r.ExpectMagic("RTAF");
  const std::uint32_t version = r.U32();
  if (version != kFeatureMapVersion) {
    throw Error(ErrorCode::kSchemaVersionMismatch,
                "unsupported RTAF version " + std::to_string(version));
  }
  const std::uint64_t h = r.U32();
  const std::uint64_t w = r.U32();
  const std::uint64_t c = r.U32();
  const std::uint8_t has_mask = r.U8();
  if (h == 0 || w == 0 || c == 0 || h > (1u << 20) || w > (1u << 20) ||
      c > (1u << 20) || has_mask > 1) {
    throw Error(ErrorCode::kDimensionMismatch, "implausible RTAF header");
  }
  const std::uint64_t expected = h * w * c * 4 + (has_mask ? h * w : 0);
  if (r.remaining() < expected) {
    throw Error(ErrorCode::kTruncatedFile, "RTAF payload shorter than header");
  }
  if (r.remaining() > expected) {
    throw Error(ErrorCode::kDimensionMismatch,
                "RTAF payload longer than header declares");
  }
  std::vector<float> data(h * w * c);
  r.F32(data);
  std::optional<std::vector<std::uint8_t>> mask;
  if (has_mask) {
    mask.emplace(h * w);
    r.Bytes(*mask);
    for (auto& m : *mask) m = m ? 1 : 0;
  }
  FeatureMap fm(int(h), int(w), int(c), std::move(data), std::move(mask));
  fm.NormalizeInPlace();
  return fm;
}

FeatureMap ReadFeatureMap(const std::string& path) {
  return DecodeFeatureMap(internal::ReadFileBytes(path));
}

void WriteFeatureMap(const FeatureMap& fm, const std::string& path) {
  internal::WriteFileBytes(path, EncodeFeatureMap(fm));
}

std::vector<std::uint8_t> EncodeEmbedding(const EmbeddingVector& e) {
  internal::ByteWriter w;
  w.Magic("RTAE");
  w.U32(static_cast<std::uint32_t>(e.values.size()));
  w.U8(static_cast<std::uint8_t>(e.modality));
  w.F32({e.values.data(), std::size_t(e.values.size())});
  return w.Take();
}

EmbeddingVector DecodeEmbedding(std::span<const std::uint8_t> bytes) {
  internal::ByteReader r(bytes);
  r.ExpectMagic("RTAE");
  const std::uint32_t n = r.U32();
  const std::uint8_t tag = r.U8();
  if (tag > 1) {
    throw Error(ErrorCode::kInvalidArgument, "unknown embedding modality");
  }
  if (n == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "empty embedding");
  }
  if (r.remaining() < std::uint64_t(n) * 4) {
    throw Error(ErrorCode::kTruncatedFile, "RTAE payload too short");
  }
  if (r.remaining() > std::uint64_t(n) * 4) {
    throw Error(ErrorCode::kDimensionMismatch, "RTAE payload too long");
  }
  EmbeddingVector e;
  e.modality = static_cast<Modality>(tag);
  e.values.resize(n);
  r.F32({e.values.data(), n});
  if (e.values.cast<double>().norm() == 0.0) {
    throw Error(ErrorCode::kZeroVector, "embedding has zero norm");
  }
  NormalizeVector(e.values);
  return e;
}

EmbeddingVector ReadEmbedding(const std::string& path) {
  return DecodeEmbedding(internal::ReadFileBytes(path));
}

void WriteEmbedding(const EmbeddingVector& e, const std::string& path) {
  internal::WriteFileBytes(path, EncodeEmbedding(e));
}

FeatureVector SampleFeature(const FeatureMap& fm, const Pixeld& image_px) {
  const Pixeld p = fm.ImageToFeature(image_px);
  const double u = p.x();
  const double v = p.y();
  if (!std::isfinite(u) || !std::isfinite(v) || u < 0 || v < 0 ||
      u > fm.width() - 1 || v > fm.height() - 1) {
    throw Error(ErrorCode::kOutOfBounds, "sample position outside the map");
  }
  const int u0 = std::min(static_cast<int>(u), std::max(fm.width() - 2, 0));
  const int v0 = std::min(static_cast<int>(v), std::max(fm.height() - 2, 0));
  const int u1 = std::min(u0 + 1, fm.width() - 1);
  const int v1 = std::min(v0 + 1, fm.height() - 1);
  const double a = u - u0;
  const double b = v - v0;

  Eigen::VectorXd f = (1 - a) * (1 - b) * fm.At(u0, v0).cast<double>();
  if (a != 0.0) f += a * (1 - b) * fm.At(u1, v0).cast<double>();
  if (b != 0.0) f += (1 - a) * b * fm.At(u0, v1).cast<double>();
  if (a != 0.0 && b != 0.0) f += a * b * fm.At(u1, v1).cast<double>();

  FeatureVector out = f.cast<float>();
  NormalizeVector(out);
  return out;
}

}  // namespace tog
