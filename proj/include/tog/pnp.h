#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "tog/geometry.h"

namespace tog {

// Pixel in the demonstration image paired with a 3D point in the target
// camera frame.
struct Correspondence2D3D {
  Pixeld source_px = Pixeld::Zero();
  Point3d target_point = Point3d::Zero();
};

struct PnPOptions {
  double ransac_threshold_px = 8.0;
  int ransac_max_iterations = 1000;
  double ransac_confidence = 0.99;
  std::uint64_t ransac_seed = 0;
  // NoConsensus unless the best set holds max(4, ceil(ratio * n)) inliers.
  double ransac_min_inlier_ratio = 0.2;

  double lm_initial_lambda = 1e-3;
  int lm_max_iterations = 100;
  double lm_min_step_norm = 1e-10;
};

struct PnPResult {
  // Maps target-camera points into the demonstration camera frame.
  RigidTransformd transform;
  std::vector<int> inlier_indices;
  double mean_reprojection_error = 0.0;
};

// Efficient PnP on >= 4 correspondences. Returns nullopt when the control
// point basis or the kernel is degenerate. Planar point sets use three
// control points.
std::optional<RigidTransformd> EstimatePoseEPnP(
    std::span<const Correspondence2D3D> corrs, const CameraIntrinsicsd& K);

struct PoseRefinementSummary {
  RigidTransformd transform;
  // Sum of squared reprojection errors after each accepted step; front() is
  // the initial cost.
  std::vector<double> cost_history;
  int iterations = 0;
  bool converged = false;
};

// Levenberg-Marquardt on the summed squared reprojection error. Rejected
// steps leave the pose unchanged, so cost_history is non-increasing.
PoseRefinementSummary RefinePose(std::span<const Correspondence2D3D> corrs,
                                 const CameraIntrinsicsd& K,
                                 const RigidTransformd& initial,
                                 const PnPOptions& options = {});

double ReprojectionError(const Correspondence2D3D& c,
                         const CameraIntrinsicsd& K, const RigidTransformd& tf);

// RANSAC over minimal 4-point EPnP hypotheses, then LM polish on inliers.
PnPResult SolvePnP(std::span<const Correspondence2D3D> corrs,
                   const CameraIntrinsicsd& K, const PnPOptions& options = {});

}  // namespace tog
