#include "tog/depth_map.h"

#include <cmath>

#include "binary_io.h"
#include "tog/error.h"

namespace tog {

std::vector<std::uint8_t> EncodeDepthMap(const DepthMap& depth) {
  internal::ByteWriter w;
  w.Magic("RTAD");
  w.U32(static_cast<std::uint32_t>(depth.height));
  w.U32(static_cast<std::uint32_t>(depth.width));
  w.F32(depth.depth);
  return w.Take();
}

DepthMap DecodeDepthMap(std::span<const std::uint8_t> bytes) {
  internal::ByteReader r(bytes);
  r.ExpectMagic("RTAD");
  const std::uint64_t h = r.U32();
  const std::uint64_t w = r.U32();
  if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20)) {
    throw Error(ErrorCode::kDimensionMismatch, "implausible RTAD header");
  }
  if (r.remaining() < h * w * 4) {
    throw Error(ErrorCode::kTruncatedFile, "RTAD payload too short");
  }
  if (r.remaining() > h * w * 4) {
    throw Error(ErrorCode::kDimensionMismatch, "RTAD payload too long");
  }
  DepthMap depth(static_cast<int>(h), static_cast<int>(w));
  r.F32(depth.depth);
  for (const float d : depth.depth) {
    if (!std::isfinite(d) || d < 0.f) {
      throw Error(ErrorCode::kInvalidArgument,
                  "depth values must be finite and >= 0");
    }
  }
  return depth;
}

DepthMap ReadDepthMap(const std::string& path) {
  return DecodeDepthMap(internal::ReadFileBytes(path));
}

void WriteDepthMap(const DepthMap& depth, const std::string& path) {
  internal::WriteFileBytes(path, EncodeDepthMap(depth));
}

}  // namespace tog
