#include "tog/memory.h"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "binary_io.h"

namespace tog {
namespace {

using nlohmann::json;

constexpr double kMinTrajectoryExtent = 1e-6;

std::string FileSafe(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    if (c == '/' || c == '\\' || c == '#' || c == ' ') c = '_';
  }
  return out;
}

Pixeld ParsePixel(const json& j) {
  if (!j.is_array() || j.size() != 2) {
    throw Error(ErrorCode::kInvalidArgument, "expected [u, v]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

Eigen::Vector3d ParseVec3(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::kInvalidArgument, "expected [x, y, z]");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::string_view AugmentationName(Augmentation a) {
  switch (a) {
    case Augmentation::kOriginal: return "original";
    case Augmentation::kHFlip: return "hflip";
    case Augmentation::kVFlip: return "vflip";
  }
  return "original";
}

Augmentation ParseAugmentation(std::string_view name) {
  if (name == "original") return Augmentation::kOriginal;
  if (name == "hflip") return Augmentation::kHFlip;
  if (name == "vflip") return Augmentation::kVFlip;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown augmentation '" + std::string(name) + "'");
}

bool MemoryInstance::operator==(const MemoryInstance& o) const {
  return id == o.id && image_ref == o.image_ref &&
         tog_position == o.tog_position && tog_direction == o.tog_direction &&
         task_text == o.task_text && image_embedding == o.image_embedding &&
         text_embedding == o.text_embedding &&
         image_embedding_ref == o.image_embedding_ref &&
         text_embedding_ref == o.text_embedding_ref &&
         feature_map_ref == o.feature_map_ref &&
         intrinsics_ref == o.intrinsics_ref && intrinsics == o.intrinsics &&
         augmentation == o.augmentation &&
         contact_covariance == o.contact_covariance;
}

const MemoryInstance* MemoryStore::Find(std::string_view id) const {
  for (const auto& inst : instances) {
    if (inst.id == id) return &inst;
  }
  return nullptr;
}

void MemoryStore::Add(MemoryInstance instance) {
  if (Find(instance.id) != nullptr) {
    throw Error(ErrorCode::kInvalidArgument,
                "duplicate memory instance id '" + instance.id + "'");
  }
  instances.push_back(std::move(instance));
}

Pixeld FitContactMean(std::span<const Pixeld> points) {
  if (points.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no contact points");
  }
  Pixeld sum = Pixeld::Zero();
  for (const auto& p : points) sum += p;
  return sum / static_cast<double>(points.size());
}

Eigen::Matrix2d FitContactCovariance(std::span<const Pixeld> points) {
  const Pixeld mean = FitContactMean(points);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : points) {
    const Pixeld d = p - mean;
    cov += d * d.transpose();
  }
  return cov / static_cast<double>(points.size());
}

Direction3d EstimateApproachDirection(std::span<const Point3d> trajectory) {
  if (trajectory.size() < 2) {
    throw Error(ErrorCode::kDegenerateTrajectory,
                "need at least two wrist positions");
  }
  Point3d mean = Point3d::Zero();
  for (const auto& p : trajectory) mean += p;
  mean /= static_cast<double>(trajectory.size());

  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  double extent = 0.0;
  for (const auto& p : trajectory) {
    const Point3d d = p - mean;
    scatter += d * d.transpose();
    extent = std::max(extent, d.norm());
  }
  if (extent <= kMinTrajectoryExtent) {
    throw Error(ErrorCode::kDegenerateTrajectory,
                "wrist positions coincide");
  }

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  Direction3d dir = eig.eigenvectors().col(2).normalized();
  if (dir.dot(trajectory.back() - trajectory.front()) < 0.0) {
    dir = -dir;
  }
  return dir;
}

MemoryInstance FlipInstance(const MemoryInstance& instance, Augmentation flip) {
  if (flip == Augmentation::kOriginal) {
    return instance;
  }
  MemoryInstance out = instance;
  const auto& K = instance.intrinsics;
  if (instance.augmentation == Augmentation::kOriginal) {
    out.augmentation = flip;
  } else if (instance.augmentation == flip) {
    out.augmentation = Augmentation::kOriginal;
  } else {
    throw Error(ErrorCode::kAlreadyAugmented,
                "cannot compose horizontal and vertical flips");
  }

  if (flip == Augmentation::kHFlip) {
    out.tog_position.x() = K.width - 1 - instance.tog_position.x();
    out.tog_direction.x() = -instance.tog_direction.x();
    out.intrinsics.cx = K.width - 1 - K.cx;
  } else {
    out.tog_position.y() = K.height - 1 - instance.tog_position.y();
    out.tog_direction.y() = -instance.tog_direction.y();
    out.intrinsics.cy = K.height - 1 - K.cy;
  }
  out.contact_covariance(0, 1) = -instance.contact_covariance(0, 1);
  out.contact_covariance(1, 0) = -instance.contact_covariance(1, 0);

  const std::string suffix = "#" + std::string(AugmentationName(flip));
  if (instance.augmentation == Augmentation::kOriginal) {
    out.id = instance.id + suffix;
  } else if (instance.id.ends_with(suffix)) {
    out.id = instance.id.substr(0, instance.id.size() - suffix.size());
  }
  // The flipped camera needs its own intrinsics file.
  out.intrinsics_ref.clear();
  return out;
}

std::vector<MemoryInstance> AugmentFlips(const MemoryInstance& instance) {
  if (instance.augmentation != Augmentation::kOriginal) {
    throw Error(ErrorCode::kAlreadyAugmented,
                "instance '" + instance.id + "' is already augmented");
  }
  return {FlipInstance(instance, Augmentation::kHFlip),
          FlipInstance(instance, Augmentation::kVFlip)};
}

MemoryInstance BuildInstance(const DemonstrationRecord& record, std::string id,
                             InstanceArtifacts artifacts) {
  if (!record.intrinsics.IsValid()) {
    throw Error(ErrorCode::kInvalidArgument, "record intrinsics invalid");
  }
  MemoryInstance inst;
  inst.id = std::move(id);
  inst.image_ref = record.image_ref;
  inst.tog_position = FitContactMean(record.contact_points);
  inst.contact_covariance = FitContactCovariance(record.contact_points);
  if (!record.intrinsics.Contains(inst.tog_position)) {
    throw Error(ErrorCode::kOutOfBounds, "contact mean outside the image");
  }
  inst.tog_direction = EstimateApproachDirection(record.wrist_trajectory);
  inst.task_text = record.task_text;
  inst.intrinsics = record.intrinsics;
  inst.intrinsics_ref = record.intrinsics_ref;
  inst.image_embedding = std::move(artifacts.image_embedding);
  inst.text_embedding = std::move(artifacts.text_embedding);
  inst.image_embedding_ref = std::move(artifacts.image_embedding_ref);
  inst.text_embedding_ref = std::move(artifacts.text_embedding_ref);
  inst.feature_map_ref = std::move(artifacts.feature_map_ref);
  return inst;
}

DemonstrationRecord ReadDemonstrationRecord(const std::string& path) {
  DemonstrationRecord rec;
  try {
    const json j = json::parse(internal::ReadTextFile(path));
    rec.image_ref = j.at("image_ref").get<std::string>();
    for (const auto& p : j.at("contact_points")) {
      rec.contact_points.push_back(ParsePixel(p));
    }
    rec.contact_frame_index = j.value("contact_frame_index", 0);
    for (const auto& p : j.at("wrist_trajectory")) {
      rec.wrist_trajectory.push_back(ParseVec3(p));
    }
    rec.task_text = j.at("task_text").get<std::string>();
    rec.intrinsics_ref = j.at("intrinsics_ref").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                "record " + path + ": " + e.what());
  }
  rec.intrinsics = ReadIntrinsics(
      internal::ResolvePath(internal::ParentDir(path), rec.intrinsics_ref));
  return rec;
}

void SaveStore(MemoryStore& store, const std::string& path) {
  const std::string dir = internal::ParentDir(path);
  json instances = json::array();
  for (auto& inst : store.instances) {
    const std::string stem = FileSafe(inst.id);
    if (inst.image_embedding_ref.empty()) {
      inst.image_embedding_ref = stem + ".image.rtae";
      WriteEmbedding(inst.image_embedding,
                     internal::ResolvePath(dir, inst.image_embedding_ref));
    }
    if (inst.text_embedding_ref.empty()) {
      inst.text_embedding_ref = stem + ".text.rtae";
      WriteEmbedding(inst.text_embedding,
                     internal::ResolvePath(dir, inst.text_embedding_ref));
    }
    if (inst.intrinsics_ref.empty()) {
      inst.intrinsics_ref = stem + ".intrinsics.txt";
      WriteIntrinsics(inst.intrinsics,
                      internal::ResolvePath(dir, inst.intrinsics_ref));
    }
    const auto& c = inst.contact_covariance;
    instances.push_back({
        {"id", inst.id},
        {"image_ref", inst.image_ref},
        {"p_A", {inst.tog_position.x(), inst.tog_position.y()}},
        {"v_A",
         {inst.tog_direction.x(), inst.tog_direction.y(),
          inst.tog_direction.z()}},
        {"task_text", inst.task_text},
        {"image_embedding_ref", inst.image_embedding_ref},
        {"text_embedding_ref", inst.text_embedding_ref},
        {"feature_map_ref", inst.feature_map_ref},
        {"intrinsics_ref", inst.intrinsics_ref},
        {"augmentation", std::string(AugmentationName(inst.augmentation))},
        {"contact_covariance", {c(0, 0), c(0, 1), c(1, 0), c(1, 1)}},
    });
  }
  const json doc = {{"schema_version", kStoreSchemaVersion},
                    {"instances", instances}};
  internal::WriteTextFile(path, doc.dump(2) + "\n");
  store.index_path = path;
}

MemoryStore LoadStore(const std::string& path) {
  const std::string dir = internal::ParentDir(path);
  json doc;
  try {
    doc = json::parse(internal::ReadTextFile(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIoError, "store index " + path + ": " + e.what());
  }
  const int version = doc.value("schema_version", -1);
  if (version != kStoreSchemaVersion) {
    throw Error(ErrorCode::kSchemaVersionMismatch,
                "store schema version " + std::to_string(version));
  }
  MemoryStore store;
  store.index_path = path;
  try {
    for (const auto& j : doc.at("instances")) {
      MemoryInstance inst;
      inst.id = j.at("id").get<std::string>();
      inst.image_ref = j.value("image_ref", "");
      inst.tog_position = ParsePixel(j.at("p_A"));
      inst.tog_direction = ParseVec3(j.at("v_A"));
      inst.task_text = j.value("task_text", "");
      inst.image_embedding_ref = j.at("image_embedding_ref").get<std::string>();
      inst.text_embedding_ref = j.at("text_embedding_ref").get<std::string>();
      inst.feature_map_ref = j.value("feature_map_ref", "");
      inst.intrinsics_ref = j.at("intrinsics_ref").get<std::string>();
      inst.augmentation =
          ParseAugmentation(j.value("augmentation", "original"));
      if (j.contains("contact_covariance")) {
        const auto& c = j["contact_covariance"];
        inst.contact_covariance << c.at(0).get<double>(),
            c.at(1).get<double>(), c.at(2).get<double>(),
            c.at(3).get<double>();
      }
      inst.image_embedding =
          ReadEmbedding(internal::ResolvePath(dir, inst.image_embedding_ref));
      inst.text_embedding =
          ReadEmbedding(internal::ResolvePath(dir, inst.text_embedding_ref));
      inst.intrinsics =
          ReadIntrinsics(internal::ResolvePath(dir, inst.intrinsics_ref));
      store.Add(std::move(inst));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIoError, "store index " + path + ": " + e.what());
  }
  return store;
}

}  // namespace tog
