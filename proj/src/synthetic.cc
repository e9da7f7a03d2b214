#include "tog/synthetic.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "binary_io.h"

namespace tog {
namespace {

using nlohmann::json;

constexpr double kMinDepth = 0.5;
constexpr double kMaxDepth = 1.5;
constexpr double kMinDepthInMemory = 0.1;
constexpr double kBoxHalfWidth = 0.25;
constexpr double kMinBaseline = 0.05;
constexpr int kMargin = 2;
// Chebyshev radius blocked around a placed point. Keeps every 5x5 depth
// window and 3x3 soft-argmax neighbourhood free of other points.
constexpr int kBlockRadius = 2;
// Lattice crossings further than this from an integer pixel are discarded
// before the float32 depth rounding is tried.
constexpr double kCoarseTolerance = 1e-3;
constexpr double kMaxAcceptedResidual = 1e-2;
constexpr double kOutlierMinError = 24.0;
constexpr double kMaxFeatureCosine = 0.96592582628906831;  // cos(15 deg)
constexpr int kPoseAttempts = 8;

struct LatticeHit {
  Eigen::Vector2i q;      // target pixel
  Eigen::Vector2i a;      // memory pixel
  float depth = 0.f;
  double residual = 0.0;  // |a - observed|
  Pixeld observed = Pixeld::Zero();  // exact projection plus noise
};

class Occupancy {
 public:
  Occupancy(int width, int height)
      : width_(width), height_(height), blocked_(std::size_t(width) * height) {}

  bool Free(const Eigen::Vector2i& p) const {
    return !blocked_[std::size_t(p.y()) * width_ + p.x()];
  }
  void Block(const Eigen::Vector2i& p) {
    for (int v = std::max(0, p.y() - kBlockRadius);
         v <= std::min(height_ - 1, p.y() + kBlockRadius); ++v) {
      for (int u = std::max(0, p.x() - kBlockRadius);
           u <= std::min(width_ - 1, p.x() + kBlockRadius); ++u) {
        blocked_[std::size_t(v) * width_ + u] = 1;
      }
    }
  }

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> blocked_;
};

Eigen::VectorXd RandomUnit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  } while (v.norm() < 1e-6);
  return v.normalized();
}

bool InsideWithMargin(const Eigen::Vector2i& p, int width, int height) {
  return p.x() >= kMargin && p.y() >= kMargin && p.x() < width - kMargin &&
         p.y() < height - kMargin;
}

class LatticeSearch {
 public:
  LatticeSearch(const CameraIntrinsicsd& K, const RigidTransformd& pose)
      : K_(K), pose_(pose) {}

  // Appends every near-lattice memory pixel found along the projection of
  // the target ray through q.
  void Walk(const Eigen::Vector2i& q, const Pixeld& noise,
            std::vector<LatticeHit>* hits) const {
    const Eigen::Vector3d ray = Backproject(K_, Pixeld(q.cast<double>()), 1.0);
    const Eigen::Vector3d m = pose_.rotation * ray;
    const Eigen::Vector3d& t = pose_.translation;
    if (m.z() * kMinDepth + t.z() < kMinDepthInMemory ||
        m.z() * kMaxDepth + t.z() < kMinDepthInMemory) {
      return;
    }
    const Pixeld near_px = ProjectAt(m, kMinDepth) + noise;
    const Pixeld far_px = ProjectAt(m, kMaxDepth) + noise;
    const double focal[2] = {K_.fx, K_.fy};
    const double center[2] = {K_.cx, K_.cy};
    const int extent[2] = {K_.width, K_.height};
    for (int axis = 0; axis < 2; ++axis) {
      const double lo = std::min(near_px(axis), far_px(axis));
      const double hi = std::max(near_px(axis), far_px(axis));
      const int k_begin = std::max(kMargin, int(std::ceil(lo)));
      const int k_end = std::min(extent[axis] - 1 - kMargin, int(std::floor(hi)));
      for (int k = k_begin; k <= k_end; ++k) {
        // Solve (m_axis d + t_axis) / (m_z d + t_z) = alpha for d.
        const double alpha = (k - noise(axis) - center[axis]) / focal[axis];
        const double denom = m(axis) - alpha * m.z();
        if (std::abs(denom) < 1e-15) continue;
        const double d = (alpha * t.z() - t(axis)) / denom;
        if (!(d >= kMinDepth && d <= kMaxDepth)) continue;
        const Pixeld coarse = ProjectAt(m, d) + noise;
        const double other = coarse(1 - axis);
        if (std::abs(other - std::round(other)) > kCoarseTolerance) continue;
        Refine(q, noise, d, hits);
      }
    }
  }

 private:
  Pixeld ProjectAt(const Eigen::Vector3d& m, double d) const {
    return Project(K_, Point3d(m * d + pose_.translation));
  }

  // Depths are stored as float32, so the residual is measured at the
  // representable depths next to the exact crossing.
  void Refine(const Eigen::Vector2i& q, const Pixeld& noise, double d,
              std::vector<LatticeHit>* hits) const {
    const float base = static_cast<float>(d);
    LatticeHit best;
    best.residual = std::numeric_limits<double>::infinity();
    for (const float df :
         {std::nextafter(base, 0.f), base, std::nextafter(base, 10.f)}) {
      const Point3d x_b = Backproject(K_, Pixeld(q.cast<double>()), double(df));
      const Pixeld exact = Project(K_, TransformPoint(pose_, x_b));
      const Pixeld observed = exact + noise;
      const Eigen::Vector2i a(int(std::lround(observed.x())),
                              int(std::lround(observed.y())));
      const double r = (observed - a.cast<double>()).norm();
      if (r < best.residual) {
        best = {q, a, df, r, observed};
      }
    }
    if (best.residual <= kMaxAcceptedResidual &&
        InsideWithMargin(best.a, K_.width, K_.height)) {
      hits->push_back(best);
    }
  }

  const CameraIntrinsicsd& K_;
  const RigidTransformd& pose_;
};

RigidTransformd SamplePose(std::mt19937_64& rng, double magnitude) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> box(-kBoxHalfWidth, kBoxHalfWidth);
  RigidTransformd pose;
  const Eigen::Vector3d axis = RandomUnit(rng, 3);
  pose.rotation = RotationFromAxisAngle<double>(axis * (magnitude * unit(rng)));
  do {
    pose.translation = Eigen::Vector3d(box(rng), box(rng), box(rng));
  } while (pose.translation.head<2>().norm() < kMinBaseline);
  return pose;
}

std::vector<Eigen::VectorXd> SampleDistinctFeatures(std::mt19937_64& rng,
                                                    int count, int dim) {
  std::vector<Eigen::VectorXd> features;
  int rejections = 0;
  while (int(features.size()) < count) {
    Eigen::VectorXd f = RandomUnit(rng, dim);
    const bool distinct = std::all_of(
        features.begin(), features.end(),
        [&](const Eigen::VectorXd& g) { return f.dot(g) < kMaxFeatureCosine; });
    if (distinct) {
      features.push_back(std::move(f));
    } else if (++rejections > 100000) {
      throw Error(ErrorCode::kInvalidSpec,
                  "feature_dim too small for distinct point features");
    }
  }
  return features;
}

FeatureMap RandomFeatureMap(std::mt19937_64& rng, int height, int width,
                            int dim) {
  std::normal_distribution<float> normal;
  std::vector<float> data(std::size_t(height) * width * dim);
  for (float& x : data) x = normal(rng);
  FeatureMap fm(height, width, dim, std::move(data),
                std::vector<std::uint8_t>(std::size_t(height) * width, 0));
  fm.NormalizeInPlace();
  fm.SetImageSize(width, height);
  return fm;
}

void PlaceFeature(FeatureMap& fm, const Eigen::Vector2i& p,
                  const Eigen::VectorXd& f) {
  fm.At(p.x(), p.y()) = f.cast<float>();
  auto mask = *fm.mask();
  mask[std::size_t(p.y()) * fm.width() + p.x()] = 1;
  fm.set_mask(std::move(mask));
}

GraspCandidated PlantedCandidate(const Point3d& p_b, const Direction3d& v_b) {
  GraspCandidated c;
  const Eigen::Vector3d helper = std::abs(v_b.x()) < 0.9
                                     ? Eigen::Vector3d::UnitX()
                                     : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d o_x = helper.cross(v_b).normalized();
  c.rotation.col(0) = o_x;
  c.rotation.col(1) = v_b.cross(o_x);
  c.rotation.col(2) = v_b;
  c.translation = p_b;
  c.stability = 1.0;
  return c;
}

json Vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json RowMajor(const Eigen::Matrix3d& R) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(R(r, c));
  }
  return a;
}

json Optional(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

void ValidateSpec(const SceneSpec& spec) {
  const bool ok = spec.n_points >= 8 && spec.noise_px >= 0.0 &&
                  std::isfinite(spec.noise_px) && spec.outlier_fraction >= 0.0 &&
                  spec.outlier_fraction <= 1.0 && spec.pose_magnitude >= 0.0 &&
                  spec.pose_magnitude <= std::numbers::pi &&
                  spec.feature_dim >= 2 && spec.image_width >= 32 &&
                  spec.image_height >= 32 && spec.num_candidates >= 1 &&
                  spec.embedding_dim >= 1;
  if (!ok) throw Error(ErrorCode::kInvalidSpec, "scene spec out of range");
}

}  // namespace

SyntheticScene GenerateScene(std::uint64_t seed, const SceneSpec& spec) {
  ValidateSpec(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticScene scene;
  scene.seed = seed;
  scene.spec = spec;

  CameraIntrinsicsd K;
  K.width = spec.image_width;
  K.height = spec.image_height;
  K.fx = K.fy = 300.0 * spec.image_width / 320.0;
  K.cx = spec.image_width / 2.0;
  K.cy = spec.image_height / 2.0;
  scene.target_intrinsics = K;

  const int num_outliers = std::min(
      int(std::lround(spec.outlier_fraction * spec.n_points)), spec.n_points - 1);
  const int num_inliers = spec.n_points - num_outliers;

  // Pick a pose whose epipolar geometry hosts enough near-lattice points.
  std::vector<LatticeHit> chosen;
  RigidTransformd pose;
  for (int attempt = 0; attempt < kPoseAttempts; ++attempt) {
    pose = SamplePose(rng, spec.pose_magnitude);
    const LatticeSearch search(K, pose);
    std::vector<LatticeHit> hits;
    for (int v = kMargin; v < K.height - kMargin; ++v) {
      for (int u = kMargin; u < K.width - kMargin; ++u) {
        Pixeld noise = Pixeld::Zero();
        if (spec.noise_px > 0.0) {
          noise = spec.noise_px * Pixeld(normal(rng), normal(rng));
        }
        search.Walk({u, v}, noise, &hits);
      }
    }
    std::stable_sort(hits.begin(), hits.end(),
                     [](const LatticeHit& a, const LatticeHit& b) {
                       return a.residual < b.residual;
                     });
    Occupancy occ_a(K.width, K.height);
    Occupancy occ_b(K.width, K.height);
    chosen.clear();
    for (const auto& h : hits) {
      if (int(chosen.size()) == num_inliers) break;
      if (!occ_a.Free(h.a) || !occ_b.Free(h.q)) continue;
      occ_a.Block(h.a);
      occ_b.Block(h.q);
      chosen.push_back(h);
    }
    if (int(chosen.size()) == num_inliers) break;
    chosen.clear();
  }
  if (chosen.empty()) {
    throw Error(ErrorCode::kInvalidSpec,
                "could not place the requested number of object points");
  }
  scene.truth.pose = pose;
  for (const auto& h : chosen) {
    scene.truth.max_lattice_residual_px =
        std::max(scene.truth.max_lattice_residual_px, h.residual);
  }
  std::shuffle(chosen.begin(), chosen.end(), rng);

  Occupancy occ_a(K.width, K.height);
  Occupancy occ_b(K.width, K.height);
  for (const auto& h : chosen) {
    occ_a.Block(h.a);
    occ_b.Block(h.q);
  }

  // Outliers: feature-consistent, geometry-inconsistent pairs.
  struct OutlierPair {
    Eigen::Vector2i a;
    Eigen::Vector2i q;
    float depth;
  };
  std::vector<OutlierPair> outliers;
  std::uniform_int_distribution<int> col(kMargin, K.width - 1 - kMargin);
  std::uniform_int_distribution<int> row(kMargin, K.height - 1 - kMargin);
  std::uniform_real_distribution<double> depth_dist(kMinDepth, kMaxDepth);
  int tries = 0;
  while (int(outliers.size()) < num_outliers) {
    if (++tries > 1000000) {
      throw Error(ErrorCode::kInvalidSpec, "could not place outliers");
    }
    const Eigen::Vector2i a(col(rng), row(rng));
    const Eigen::Vector2i q(col(rng), row(rng));
    const float d = static_cast<float>(depth_dist(rng));
    if (!occ_a.Free(a) || !occ_b.Free(q)) continue;
    const Point3d x_a =
        TransformPoint(pose, Backproject(K, Pixeld(q.cast<double>()), double(d)));
    if (x_a.z() > kMinDepthInMemory &&
        (Project(K, x_a) - a.cast<double>()).norm() < kOutlierMinError) {
      continue;
    }
    occ_a.Block(a);
    occ_b.Block(q);
    outliers.push_back({a, q, d});
  }

  // Features and maps.
  const auto features =
      SampleDistinctFeatures(rng, spec.n_points, spec.feature_dim);
  scene.memory_feature_map =
      RandomFeatureMap(rng, K.height, K.width, spec.feature_dim);
  scene.target_feature_map =
      RandomFeatureMap(rng, K.height, K.width, spec.feature_dim);
  scene.target_depth = DepthMap(K.height, K.width);

  std::size_t feature_index = 0;
  for (const auto& h : chosen) {
    const auto& f = features[feature_index++];
    PlaceFeature(scene.memory_feature_map, h.a, f);
    PlaceFeature(scene.target_feature_map, h.q, f);
    scene.target_depth.At(h.q.x(), h.q.y()) = h.depth;
    scene.correspondences.push_back(
        {h.observed,
         Backproject(K, Pixeld(h.q.cast<double>()), double(h.depth))});
    scene.inlier.push_back(true);
  }
  for (const auto& o : outliers) {
    const auto& f = features[feature_index++];
    PlaceFeature(scene.memory_feature_map, o.a, f);
    PlaceFeature(scene.target_feature_map, o.q, f);
    scene.target_depth.At(o.q.x(), o.q.y()) = o.depth;
    scene.correspondences.push_back(
        {o.a.cast<double>(),
         Backproject(K, Pixeld(o.q.cast<double>()), double(o.depth))});
    scene.inlier.push_back(false);
  }

  // Ground truth at the TOG point, which is the first inlier.
  const LatticeHit& tog = chosen.front();
  Direction3d v_a = RandomUnit(rng, 3);
  scene.truth.p_b_px = tog.q.cast<double>();
  scene.truth.p_b = Backproject(K, scene.truth.p_b_px, double(tog.depth));
  scene.truth.v_b = RotateDirectionInverse(pose, v_a);

  MemoryInstance& inst = scene.memory_instance;
  inst.id = "synthetic-" + std::to_string(seed);
  inst.task_text = "synthetic task " + std::to_string(seed);
  inst.tog_position = tog.a.cast<double>();
  inst.tog_direction = v_a;
  inst.intrinsics = K;
  inst.image_embedding = {RandomUnit(rng, spec.embedding_dim).cast<float>(),
                          Modality::kImage};
  inst.text_embedding = {RandomUnit(rng, spec.embedding_dim).cast<float>(),
                         Modality::kText};
  scene.query_image_embedding = inst.image_embedding;
  scene.query_text_embedding = inst.text_embedding;

  // Candidates: one planted, the rest offset by at least 5 cm.
  const int planted =
      std::uniform_int_distribution<int>(0, spec.num_candidates - 1)(rng);
  std::uniform_real_distribution<double> offset(0.05, 0.4);
  for (int i = 0; i < spec.num_candidates; ++i) {
    if (i == planted) {
      scene.candidates.push_back(
          PlantedCandidate(scene.truth.p_b, scene.truth.v_b));
      continue;
    }
    const Eigen::Vector4d qv = RandomUnit(rng, 4);
    GraspCandidated c;
    c.rotation = Eigen::Quaterniond(qv(0), qv(1), qv(2), qv(3)).toRotationMatrix();
    c.translation = scene.truth.p_b + offset(rng) * RandomUnit(rng, 3);
    c.stability = unit(rng);
    scene.candidates.push_back(c);
  }
  scene.truth.best_candidate_index = planted;
  return scene;
}

ScenePaths WriteScene(const SyntheticScene& scene, const std::string& dir) {
  ScenePaths paths;
  const std::string memory_dir = internal::ResolvePath(dir, "memory");
  paths.memory_index = internal::ResolvePath(memory_dir, "index.json");
  paths.query = internal::ResolvePath(dir, "query.json");
  paths.candidates = internal::ResolvePath(dir, "candidates.json");
  paths.ground_truth = internal::ResolvePath(dir, "ground_truth.json");

  MemoryStore store;
  MemoryInstance inst = scene.memory_instance;
  inst.feature_map_ref = inst.id + ".rtaf";
  WriteFeatureMap(scene.memory_feature_map,
                  internal::ResolvePath(memory_dir, inst.feature_map_ref));
  store.Add(std::move(inst));
  SaveStore(store, paths.memory_index);

  WriteFeatureMap(scene.target_feature_map,
                  internal::ResolvePath(dir, "target.rtaf"));
  WriteDepthMap(scene.target_depth, internal::ResolvePath(dir, "target.rtad"));
  WriteIntrinsics(scene.target_intrinsics,
                  internal::ResolvePath(dir, "target.intrinsics.txt"));
  WriteEmbedding(scene.query_image_embedding,
                 internal::ResolvePath(dir, "query.image.rtae"));
  WriteEmbedding(scene.query_text_embedding,
                 internal::ResolvePath(dir, "query.text.rtae"));
  const json query = {{"task_text", scene.memory_instance.task_text},
                      {"image_embedding_ref", "query.image.rtae"},
                      {"text_embedding_ref", "query.text.rtae"},
                      {"target_feature_map_ref", "target.rtaf"},
                      {"target_image_ref", ""},
                      {"depth_ref", "target.rtad"},
                      {"intrinsics_ref", "target.intrinsics.txt"}};
  internal::WriteTextFile(paths.query, query.dump(2) + "\n");
  internal::WriteTextFile(paths.candidates, CandidatesToJson(scene.candidates));

  const auto& truth = scene.truth;
  const json gt = {
      {"seed", scene.seed},
      {"spec",
       {{"n_points", scene.spec.n_points},
        {"noise_px", scene.spec.noise_px},
        {"outlier_fraction", scene.spec.outlier_fraction},
        {"pose_magnitude", scene.spec.pose_magnitude},
        {"feature_dim", scene.spec.feature_dim}}},
      {"R", RowMajor(truth.pose.rotation)},
      {"t", Vec(truth.pose.translation)},
      {"p_B_px", Vec(truth.p_b_px)},
      {"p_B", Vec(truth.p_b)},
      {"v_B", Vec(truth.v_b)},
      {"best_candidate_index", truth.best_candidate_index},
      {"max_lattice_residual_px", truth.max_lattice_residual_px}};
  internal::WriteTextFile(paths.ground_truth, gt.dump(2) + "\n");
  return paths;
}

VerificationReport VerifyScene(const SyntheticScene& scene,
                               const PipelineOutput& output) {
  const auto& truth = scene.truth;
  VerificationReport r;
  if (output.pose) {
    r.rotation_error_rad =
        RotationGeodesicDistance(output.pose->rotation, truth.pose.rotation);
    r.translation_error_m =
        (output.pose->translation - truth.pose.translation).norm();
  }
  if (output.p_b_px) r.p_b_px_error = (*output.p_b_px - truth.p_b_px).norm();
  if (output.p_b) r.p_b_error_m = (*output.p_b - truth.p_b).norm();
  if (output.v_b) r.direction_error_rad = AngleBetween(*output.v_b, truth.v_b);
  if (output.selected_index) {
    r.selected_correct = *output.selected_index == truth.best_candidate_index;
  }
  return r;
}

std::string VerificationReportToJson(const VerificationReport& r) {
  const json j = {
      {"rotation_error_rad", Optional(r.rotation_error_rad)},
      {"translation_error_m", Optional(r.translation_error_m)},
      {"p_B_px_error", Optional(r.p_b_px_error)},
      {"p_B_error_m", Optional(r.p_b_error_m)},
      {"direction_error_rad", Optional(r.direction_error_rad)},
      {"selected_correct",
       r.selected_correct ? json(*r.selected_correct) : json(nullptr)}};
  return j.dump(2) + "\n";
}

}  // namespace tog
