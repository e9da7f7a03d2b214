#pragma once

#include <string>
#include <vector>

#include "tog/depth_map.h"
#include "tog/feature_map.h"
#include "tog/geometry.h"
#include "tog/memory.h"
#include "tog/pnp.h"

namespace tog {

struct Correspondence2D2D {
  Pixeld source_px = Pixeld::Zero();  // image pixels of the memory view
  Pixeld target_px = Pixeld::Zero();  // image pixels of the target view
  double similarity = 0.0;
};

struct PointTransfer {
  Pixeld target_px = Pixeld::Zero();
  double confidence = 0.0;
};

struct TransferOptions {
  double match_confidence_min = 0.3;
  double softargmax_temperature = 0.05;
  int depth_window = 5;
  PnPOptions pnp;
};

// Moves the memory TOG pixel onto the target by dense feature matching.
PointTransfer TransferPoint(const FeatureMap& source, const Pixeld& p_a,
                            const FeatureMap& target,
                            const TransferOptions& options = {});

// Mutual nearest neighbours (cosine) between the two masked pixel sets,
// sorted by descending similarity.
std::vector<Correspondence2D2D> MatchBestBuddies(const FeatureMap& source,
                                                 const FeatureMap& target);

// Median of the nonzero depths in a window x window patch around px, or
// nullopt if none.
std::optional<double> WindowMedianDepth(const DepthMap& depth, const Pixeld& px,
                                        int window = 5);

std::vector<Correspondence2D3D> LiftCorrespondences(
    const std::vector<Correspondence2D2D>& matches, const DepthMap& depth,
    const CameraIntrinsicsd& K_b, int window = 5);

Direction3d TransferDirection(const PnPResult& pnp, const Direction3d& v_a);

struct TogConstraint3D {
  Point3d position = Point3d::Zero();
  Direction3d direction = Direction3d::UnitZ();
  Pixeld position_px = Pixeld::Zero();
};

struct TransferResult {
  TogConstraint3D constraint;
  PnPResult pnp;
  double point_confidence = 0.0;
  int num_matches = 0;
  int num_lifted = 0;
};

// source/target feature maps must already carry their image scale.
TransferResult TransferConstraints(const MemoryInstance& instance,
                                   const FeatureMap& source,
                                   const FeatureMap& target,
                                   const DepthMap& depth,
                                   const CameraIntrinsicsd& K_b,
                                   const TransferOptions& options = {});

std::string ConstraintToJson(const TransferResult& result);
TogConstraint3D ConstraintFromJson(const std::string& text);

}  // namespace tog
