#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tog/alignment.h"
#include "tog/depth_map.h"
#include "tog/feature_map.h"
#include "tog/memory.h"
#include "tog/pnp.h"

namespace tog {

struct SceneSpec {
  int n_points = 50;
  double noise_px = 0.0;
  double outlier_fraction = 0.0;
  // Upper bound on the planted rotation angle, radians.
  double pose_magnitude = 0.6;
  int feature_dim = 16;

  int image_width = 320;
  int image_height = 240;
  int num_candidates = 100;
  int embedding_dim = 32;
};

struct SceneGroundTruth {
  // Maps target-camera points into the memory camera frame.
  RigidTransformd pose;
  Pixeld p_b_px = Pixeld::Zero();
  Point3d p_b = Point3d::Zero();
  Direction3d v_b = Direction3d::UnitZ();
  int best_candidate_index = -1;
  // Largest distance between a planted inlier's memory pixel and the exact
  // (noise-shifted) projection of its target point.
  double max_lattice_residual_px = 0.0;
};

// A memory view and a target view of one point object, consistent with a
// planted pose. Every object point sits on an integer pixel in both views.
struct SyntheticScene {
  std::uint64_t seed = 0;
  SceneSpec spec;

  MemoryInstance memory_instance;
  FeatureMap memory_feature_map;

  EmbeddingVector query_image_embedding;
  EmbeddingVector query_text_embedding;
  FeatureMap target_feature_map;
  DepthMap target_depth;
  CameraIntrinsicsd target_intrinsics;

  std::vector<GraspCandidated> candidates;

  // Index 0 is the TOG point. inlier[i] is false for planted outliers.
  std::vector<Correspondence2D3D> correspondences;
  std::vector<bool> inlier;

  SceneGroundTruth truth;
};

// Throws kInvalidSpec on bad specs or when the views cannot host n_points.
SyntheticScene GenerateScene(std::uint64_t seed, const SceneSpec& spec = {});

struct ScenePaths {
  std::string memory_index;
  std::string query;
  std::string candidates;
  std::string ground_truth;
};

// Writes the scene in the formats the pipeline consumes.
ScenePaths WriteScene(const SyntheticScene& scene, const std::string& dir);

// Pipeline outputs to compare against a scene; absent fields are reported
// as unevaluated.
struct PipelineOutput {
  std::optional<RigidTransformd> pose;
  std::optional<Pixeld> p_b_px;
  std::optional<Point3d> p_b;
  std::optional<Direction3d> v_b;
  std::optional<int> selected_index;
};

struct VerificationReport {
  std::optional<double> rotation_error_rad;
  std::optional<double> translation_error_m;
  std::optional<double> p_b_px_error;
  std::optional<double> p_b_error_m;
  std::optional<double> direction_error_rad;
  std::optional<bool> selected_correct;
};

VerificationReport VerifyScene(const SyntheticScene& scene,
                               const PipelineOutput& output);

std::string VerificationReportToJson(const VerificationReport& report);

}  // namespace tog
