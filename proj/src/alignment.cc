#include "tog/alignment.h"

#include <algorithm>

#include <json.hpp>

#include "binary_io.h"

namespace tog {
namespace {

using nlohmann::json;

json RowMajor(const Eigen::Matrix3d& R) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(R(r, c));
  }
  return a;
}

}  // namespace

GraspSelection SelectGrasp(std::span<const GraspCandidated> candidates,
                           const Point3d& p_b, const Direction3d& v_b,
                           const ScoringParamsd& params) {
  if (candidates.empty()) {
    throw Error(ErrorCode::kNoCandidates, "no grasp candidates");
  }
  GraspSelection best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s_task = ScoreTask(candidates[i], p_b, v_b, params);
    const double s = FuseScores(s_task, candidates[i].stability, params);
    if (best.index < 0 || s > best.score) {
      best.index = static_cast<int>(i);
      best.candidate = candidates[i];
      best.s_task = s_task;
      best.s_geo = candidates[i].stability;
      best.score = s;
    }
  }
  return best;
}

std::vector<GraspCandidated> ParseCandidates(const std::string& text) {
  std::vector<GraspCandidated> out;
  try {
    const json doc = json::parse(text);
    if (!doc.is_array()) {
      throw Error(ErrorCode::kInvalidArgument, "candidates must be a list");
    }
    for (const auto& j : doc) {
      const auto& R = j.at("R");
      const auto& t = j.at("t");
      if (R.size() != 9 || t.size() != 3) {
        throw Error(ErrorCode::kInvalidArgument, "candidate R/t malformed");
      }
      GraspCandidated c;
      for (int r = 0; r < 3; ++r) {
        for (int col = 0; col < 3; ++col) {
          c.rotation(r, col) = R[std::size_t(3 * r + col)].get<double>();
        }
      }
      for (int i = 0; i < 3; ++i) c.translation(i) = t[std::size_t(i)].get<double>();
      c.stability = std::clamp(j.at("score").get<double>(), 0.0, 1.0);
      const Eigen::Matrix3d gram = c.rotation.transpose() * c.rotation;
      if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
        throw Error(ErrorCode::kInvalidArgument,
                    "candidate rotation is not orthonormal");
      }
      out.push_back(c);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("candidates JSON: ") + e.what());
  }
  return out;
}

std::vector<GraspCandidated> ReadCandidates(const std::string& path) {
  return ParseCandidates(internal::ReadTextFile(path));
}

std::string CandidatesToJson(std::span<const GraspCandidated> candidates) {
  json list = json::array();
  for (const auto& c : candidates) {
    list.push_back({{"R", RowMajor(c.rotation)},
                    {"t", {c.translation.x(), c.translation.y(),
                           c.translation.z()}},
                    {"score", c.stability}});
  }
  return list.dump(2) + "\n";
}

std::string SelectionToJson(const GraspSelection& s) {
  const auto& t = s.candidate.translation;
  const json j = {{"index", s.index},
                  {"R", RowMajor(s.candidate.rotation)},
                  {"t", {t.x(), t.y(), t.z()}},
                  {"S_task", s.s_task},
                  {"S_geo", s.s_geo},
                  {"S", s.score}};
  return j.dump(2) + "\n";
}

}  // namespace tog
