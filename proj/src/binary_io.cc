#include "binary_io.h"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace tog::internal {

namespace fs = std::filesystem;

std::vector<std::uint8_t> ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIoError, "cannot open " + path);
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void WriteFileBytes(const std::string& path,
                    std::span<const std::uint8_t> bytes) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) {
    fs::create_directories(parent);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIoError, "cannot write " + path);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(ErrorCode::kIoError, "short write to " + path);
  }
}

std::string ReadTextFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIoError, "cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteTextFile(const std::string& path, const std::string& text) {
  WriteFileBytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()),
                        text.size()});
}

std::string ResolvePath(const std::string& base_dir, const std::string& ref) {
  const fs::path p(ref);
  if (p.is_absolute() || base_dir.empty()) {
    return p.string();
  }
  return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string ParentDir(const std::string& path) {
  return fs::path(path).parent_path().string();
}

}  // namespace tog::internal
