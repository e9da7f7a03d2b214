#include "tog/geometry.h"

#include <charconv>
#include <map>
#include <sstream>

#include "binary_io.h"

namespace tog {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double ParseNumber(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "intrinsics: bad value for " + key + ": '" + text + "'");
  }
  return v;
}

std::string FormatDecimal(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::fixed);
  return std::string(buf, res.ptr);
}

}  // namespace

CameraIntrinsicsd ParseIntrinsics(const std::string& text) {
  std::map<std::string, double> values;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = Trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  "intrinsics: expected key=value, got '" + line + "'");
    }
    const std::string key = Trim(line.substr(0, eq));
    values[key] = ParseNumber(key, Trim(line.substr(eq + 1)));
  }
  for (const char* key : {"fx", "fy", "cx", "cy", "width", "height"}) {
    if (!values.count(key)) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string("intrinsics: missing ") + key);
    }
  }
  CameraIntrinsicsd K;
  K.fx = values["fx"];
  K.fy = values["fy"];
  K.cx = values["cx"];
  K.cy = values["cy"];
  K.width = static_cast<int>(values["width"]);
  K.height = static_cast<int>(values["height"]);
  if (!K.IsValid()) {
    throw Error(ErrorCode::kInvalidArgument, "intrinsics out of range");
  }
  return K;
}

std::string FormatIntrinsics(const CameraIntrinsicsd& K) {
  std::ostringstream out;
  out << "fx=" << FormatDecimal(K.fx) << "\n"
      << "fy=" << FormatDecimal(K.fy) << "\n"
      << "cx=" << FormatDecimal(K.cx) << "\n"
      << "cy=" << FormatDecimal(K.cy) << "\n"
      << "width=" << K.width << "\n"
      << "height=" << K.height << "\n";
  return out.str();
}

CameraIntrinsicsd ReadIntrinsics(const std::string& path) {
  return ParseIntrinsics(internal::ReadTextFile(path));
}

void WriteIntrinsics(const CameraIntrinsicsd& K, const std::string& path) {
  internal::WriteTextFile(path, FormatIntrinsics(K));
}

}  // namespace tog
