#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "tog/error.h"

// Little-endian byte buffers for the RTAF/RTAE/RTAD formats.

namespace tog::internal {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void Magic(const char (&magic)[5]) { Raw(magic, 4); }
  void U8(std::uint8_t v) { bytes_.push_back(v); }
  void U32(std::uint32_t v) { Raw(&v, sizeof(v)); }
  void F32(std::span<const float> values) {
    Raw(values.data(), values.size_bytes());
  }
  void Bytes(std::span<const std::uint8_t> values) {
    bytes_.insert(bytes_.end(), values.begin(), values.end());
  }
  std::vector<std::uint8_t> Take() { return std::move(bytes_); }

 private:
  void Raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void ExpectMagic(const char (&magic)[5]) {
    if (bytes_.size() < 4 || std::memcmp(bytes_.data(), magic, 4) != 0) {
      throw Error(ErrorCode::kBadMagic,
                  std::string("expected magic ") + magic);
    }
    pos_ = 4;
  }
  std::uint8_t U8() {
    Need(1);
    return bytes_[pos_++];
  }
  std::uint32_t U32() {
    std::uint32_t v;
    Read(&v, sizeof(v));
    return v;
  }
  void F32(std::span<float> out) { Read(out.data(), out.size_bytes()); }
  void Bytes(std::span<std::uint8_t> out) { Read(out.data(), out.size()); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void Need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::kTruncatedFile, "unexpected end of data");
    }
  }
  void Read(void* p, std::size_t n) {
    Need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> ReadFileBytes(const std::string& path);
void WriteFileBytes(const std::string& path,
                    std::span<const std::uint8_t> bytes);
std::string ReadTextFile(const std::string& path);
void WriteTextFile(const std::string& path, const std::string& text);

// Resolves `ref` against `base_dir` unless it is absolute.
std::string ResolvePath(const std::string& base_dir, const std::string& ref);
std::string ParentDir(const std::string& path);

}  // namespace tog::internal
