#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tog/feature_map.h"
#include "tog/geometry.h"

namespace tog {

enum class Augmentation { kOriginal, kHFlip, kVFlip };

std::string_view AugmentationName(Augmentation a);
Augmentation ParseAugmentation(std::string_view name);

// One demonstration as produced by the offline hand/contact toolchain.
struct DemonstrationRecord {
  std::string image_ref;
  std::vector<Pixeld> contact_points;
  int contact_frame_index = 0;
  // Wrist joint positions in the demonstration camera frame, oldest first.
  std::vector<Point3d> wrist_trajectory;
  std::string task_text;
  std::string intrinsics_ref;
  CameraIntrinsicsd intrinsics;
};

struct MemoryInstance {
  std::string id;
  std::string image_ref;
  Pixeld tog_position = Pixeld::Zero();
  Direction3d tog_direction = Direction3d::UnitZ();
  std::string task_text;
  EmbeddingVector image_embedding;
  EmbeddingVector text_embedding;
  std::string image_embedding_ref;
  std::string text_embedding_ref;
  std::string feature_map_ref;
  std::string intrinsics_ref;
  CameraIntrinsicsd intrinsics;
  Augmentation augmentation = Augmentation::kOriginal;
  // Diagnostic only: covariance of the contact pixels around tog_position.
  Eigen::Matrix2d contact_covariance = Eigen::Matrix2d::Zero();

  bool operator==(const MemoryInstance& other) const;
};

struct MemoryStore {
  std::vector<MemoryInstance> instances;
  std::string index_path;

  const MemoryInstance* Find(std::string_view id) const;
  // Throws kInvalidArgument on a duplicate id.
  void Add(MemoryInstance instance);
};

Pixeld FitContactMean(std::span<const Pixeld> points);
Eigen::Matrix2d FitContactCovariance(std::span<const Pixeld> points);

// Principal direction of the wrist path, oriented from its first toward its
// last sample.
Direction3d EstimateApproachDirection(std::span<const Point3d> trajectory);

// Returns {hflip, vflip} copies. Flipped feature maps and embeddings are
// external artifacts; the caller assigns their refs.
std::vector<MemoryInstance> AugmentFlips(const MemoryInstance& instance);
MemoryInstance FlipInstance(const MemoryInstance& instance, Augmentation flip);

struct InstanceArtifacts {
  EmbeddingVector image_embedding;
  EmbeddingVector text_embedding;
  std::string image_embedding_ref;
  std::string text_embedding_ref;
  std::string feature_map_ref;
};

MemoryInstance BuildInstance(const DemonstrationRecord& record,
                             std::string id, InstanceArtifacts artifacts);

// Demonstration record JSON; intrinsics_ref is resolved relative to the
// record file.
DemonstrationRecord ReadDemonstrationRecord(const std::string& path);

// Writes the JSON index plus the embedding and intrinsics files each
// instance references (refs relative to the index directory). Empty refs
// are assigned defaults.
void SaveStore(MemoryStore& store, const std::string& path);
MemoryStore LoadStore(const std::string& path);

inline constexpr int kStoreSchemaVersion = 1;

}  // namespace tog
