#include "tog/transfer.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace tog {
namespace {

using nlohmann::json;

struct MaskedFeatures {
  std::vector<Eigen::Vector2i> pixels;
  Eigen::MatrixXd features;  // C x N, unit columns
};

MaskedFeatures CollectMasked(const FeatureMap& fm) {
  MaskedFeatures out;
  out.pixels = fm.MaskedPixels();
  out.features.resize(fm.channels(), Eigen::Index(out.pixels.size()));
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const Eigen::VectorXd f =
        fm.At(out.pixels[i].x(), out.pixels[i].y()).cast<double>();
    const double n = f.norm();
    out.features.col(Eigen::Index(i)) = n > 0.0 ? Eigen::VectorXd(f / n) : f;
  }
  return out;
}

Pixeld ToImage(const FeatureMap& fm, const Eigen::Vector2i& grid) {
  return fm.FeatureToImage(grid.cast<double>());
}

json Vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

PointTransfer TransferPoint(const FeatureMap& source, const Pixeld& p_a,
                            const FeatureMap& target,
                            const TransferOptions& options) {
  if (source.channels() != target.channels()) {
    throw Error(ErrorCode::kDimensionMismatch, "channel counts differ");
  }
  const Pixeld grid_a = source.ImageToFeature(p_a);
  if (!source.InMask(int(std::lround(grid_a.x())),
                     int(std::lround(grid_a.y())))) {
    throw Error(ErrorCode::kOutOfBounds, "TOG pixel outside the source mask");
  }
  const Eigen::VectorXd query = SampleFeature(source, p_a).cast<double>();

  const MaskedFeatures tgt = CollectMasked(target);
  if (tgt.pixels.empty()) {
    throw Error(ErrorCode::kEmptyMask, "target mask is empty");
  }
  const Eigen::VectorXd sim = tgt.features.transpose() * query;
  Eigen::Index best = 0;
  sim.maxCoeff(&best);
  const double peak = sim(best);
  if (!(peak >= options.match_confidence_min)) {
    throw Error(ErrorCode::kLowConfidenceMatch,
                "peak cosine " + std::to_string(peak) + " below threshold");
  }

  // Soft-argmax over the masked 3x3 neighbourhood of the peak.
  const Eigen::Vector2i center = tgt.pixels[std::size_t(best)];
  Eigen::Vector2d weighted = Eigen::Vector2d::Zero();
  double weight_sum = 0.0;
  for (int dv = -1; dv <= 1; ++dv) {
    for (int du = -1; du <= 1; ++du) {
      const int u = center.x() + du;
      const int v = center.y() + dv;
      if (!target.InMask(u, v)) continue;
      const double c = CosineSimilarity(target.At(u, v), query);
      const double w = std::exp((c - peak) / options.softargmax_temperature);
      weighted += w * Eigen::Vector2d(u, v);
      weight_sum += w;
    }
  }
  PointTransfer out;
  out.target_px = target.FeatureToImage(weighted / weight_sum);
  out.confidence = peak;
  return out;
}

std::vector<Correspondence2D2D> MatchBestBuddies(const FeatureMap& source,
                                                 const FeatureMap& target) {
  if (source.channels() != target.channels()) {
    throw Error(ErrorCode::kDimensionMismatch, "channel counts differ");
  }
  const MaskedFeatures src = CollectMasked(source);
  const MaskedFeatures tgt = CollectMasked(target);
  if (src.pixels.empty() || tgt.pixels.empty()) {
    throw Error(ErrorCode::kEmptyMask, "best-buddy matching needs both masks");
  }
  const Eigen::MatrixXd sim = src.features.transpose() * tgt.features;

  std::vector<Eigen::Index> best_for_target(tgt.pixels.size());
  for (Eigen::Index j = 0; j < sim.cols(); ++j) {
    sim.col(j).maxCoeff(&best_for_target[std::size_t(j)]);
  }
  std::vector<Correspondence2D2D> matches;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index j = 0;
    sim.row(i).maxCoeff(&j);
    if (best_for_target[std::size_t(j)] != i) continue;
    matches.push_back({ToImage(source, src.pixels[std::size_t(i)]),
                       ToImage(target, tgt.pixels[std::size_t(j)]), sim(i, j)});
  }
  std::stable_sort(matches.begin(), matches.end(),
                   [](const auto& a, const auto& b) {
                     return a.similarity > b.similarity;
                   });
  return matches;
}

std::optional<double> WindowMedianDepth(const DepthMap& depth, const Pixeld& px,
                                        int window) {
  const int cu = static_cast<int>(std::lround(px.x()));
  const int cv = static_cast<int>(std::lround(px.y()));
  const int half = window / 2;
  std::vector<float> values;
  values.reserve(std::size_t(window) * window);
  for (int v = cv - half; v <= cv + half; ++v) {
    if (v < 0 || v >= depth.height) continue;
    for (int u = cu - half; u <= cu + half; ++u) {
      if (u < 0 || u >= depth.width) continue;
      const float d = depth.At(u, v);
      if (d > 0.f) values.push_back(d);
    }
  }
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return double(values[n / 2]);
  return 0.5 * (double(values[n / 2 - 1]) + double(values[n / 2]));
}

std::vector<Correspondence2D3D> LiftCorrespondences(
    const std::vector<Correspondence2D2D>& matches, const DepthMap& depth,
    const CameraIntrinsicsd& K_b, int window) {
  std::vector<Correspondence2D3D> lifted;
  for (const auto& m : matches) {
    const auto d = WindowMedianDepth(depth, m.target_px, window);
    if (!d) continue;
    lifted.push_back({m.source_px, Backproject(K_b, m.target_px, *d)});
  }
  if (lifted.size() < 4) {
    throw Error(ErrorCode::kTooFewLifted,
                std::to_string(lifted.size()) + " correspondences have depth");
  }
  return lifted;
}

Direction3d TransferDirection(const PnPResult& pnp, const Direction3d& v_a) {
  return RotateDirectionInverse(pnp.transform, v_a);
}

TransferResult TransferConstraints(const MemoryInstance& instance,
                                   const FeatureMap& source,
                                   const FeatureMap& target,
                                   const DepthMap& depth,
                                   const CameraIntrinsicsd& K_b,
                                   const TransferOptions& options) {
  TransferResult result;
  const PointTransfer point =
      TransferPoint(source, instance.tog_position, target, options);
  result.point_confidence = point.confidence;
  const auto grasp_depth =
      WindowMedianDepth(depth, point.target_px, options.depth_window);
  if (!grasp_depth) {
    throw Error(ErrorCode::kMissingDepthAtGraspPoint,
                "no valid depth around the transferred TOG pixel");
  }
  result.constraint.position_px = point.target_px;
  result.constraint.position = Backproject(K_b, point.target_px, *grasp_depth);

  const auto matches = MatchBestBuddies(source, target);
  result.num_matches = static_cast<int>(matches.size());
  const auto lifted =
      LiftCorrespondences(matches, depth, K_b, options.depth_window);
  result.num_lifted = static_cast<int>(lifted.size());
  result.pnp = SolvePnP(lifted, instance.intrinsics, options.pnp);
  result.constraint.direction =
      TransferDirection(result.pnp, instance.tog_direction);
  return result;
}

std::string ConstraintToJson(const TransferResult& result) {
  const auto& c = result.constraint;
  const auto& tf = result.pnp.transform;
  json R = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) R.push_back(tf.rotation(r, col));
  }
  const json j = {
      {"p_B", Vec(c.position)},
      {"v_B", Vec(c.direction)},
      {"p_B_px", Vec(c.position_px)},
      {"pnp",
       {{"R", R},
        {"t", Vec(tf.translation)},
        {"inliers", result.pnp.inlier_indices.size()},
        {"mean_reproj_px", result.pnp.mean_reprojection_error}}},
  };
  return j.dump(2) + "\n";
}

TogConstraint3D ConstraintFromJson(const std::string& text) {
  try {
    const json j = json::parse(text);
    auto vec = [&](const char* key, int n) {
      const auto& a = j.at(key);
      if (!a.is_array() || int(a.size()) != n) {
        throw Error(ErrorCode::kInvalidArgument,
                    std::string("constraint field ") + key + " malformed");
      }
      Eigen::VectorXd v(n);
      for (int i = 0; i < n; ++i) v(i) = a[std::size_t(i)].get<double>();
      return v;
    };
    TogConstraint3D c;
    c.position = vec("p_B", 3);
    c.direction = Direction3d(vec("v_B", 3)).normalized();
    c.position_px = vec("p_B_px", 2);
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("constraint JSON: ") + e.what());
  }
}

}  // namespace tog
