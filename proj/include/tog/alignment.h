#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tog/geometry.h"

namespace tog {

// 6-DOF gripper pose in the target camera frame. Rotation columns are
// (o_x, o_y, o_z); o_z is the approach axis.
template <typename T>
struct GraspCandidate {
  Eigen::Matrix<T, 3, 3> rotation = Eigen::Matrix<T, 3, 3>::Identity();
  Point3<T> translation = Point3<T>::Zero();
  T stability = T(0);

  Direction3<T> approach() const { return rotation.col(2); }
};

using GraspCandidated = GraspCandidate<double>;

template <typename T>
struct ScoringParams {
  T sigma = T(0.1);
  T w_task = T(0.95);
  T w_geo = T(0.05);

  bool IsValid() const {
    return sigma > T(0) && std::abs(w_task + w_geo - T(1)) < T(1e-12);
  }
};

using ScoringParamsd = ScoringParams<double>;

// cos(v_B, o_z) + exp(-|t - p_B|^2 / (2 sigma^2)), in [-1, 2].
template <typename T>
T ScoreTask(const GraspCandidate<T>& c, const Point3<T>& p_b,
            const Direction3<T>& v_b, const ScoringParams<T>& params = {}) {
  const Direction3<T> o_z = c.approach();
  const T cosine = v_b.dot(o_z) / (v_b.norm() * o_z.norm());
  const T dist2 = (c.translation - p_b).squaredNorm();
  return cosine + std::exp(-dist2 / (T(2) * params.sigma * params.sigma));
}

template <typename T>
T FuseScores(T s_task, T s_geo, const ScoringParams<T>& params = {}) {
  return params.w_task * s_task + params.w_geo * s_geo;
}

template <typename T>
T ScoreFinal(const GraspCandidate<T>& c, const Point3<T>& p_b,
             const Direction3<T>& v_b, const ScoringParams<T>& params = {}) {
  return FuseScores(ScoreTask(c, p_b, v_b, params), c.stability, params);
}

struct GraspSelection {
  int index = -1;
  GraspCandidated candidate;
  double s_task = 0.0;
  double s_geo = 0.0;
  double score = 0.0;
};

// Highest final score, ties by lowest index. Throws kNoCandidates if empty.
GraspSelection SelectGrasp(std::span<const GraspCandidated> candidates,
                           const Point3d& p_b, const Direction3d& v_b,
                           const ScoringParamsd& params = {});

// JSON list of {R:[9 row-major], t:[3], score}; stability clamped to [0, 1].
std::vector<GraspCandidated> ParseCandidates(const std::string& text);
std::vector<GraspCandidated> ReadCandidates(const std::string& path);
std::string CandidatesToJson(std::span<const GraspCandidated> candidates);

// {index, R, t, S_task, S_geo, S}
std::string SelectionToJson(const GraspSelection& selection);

}  // namespace tog
