#include "tog/transfer.h"

#include <random>
#include <set>

#include <gtest/gtest.h>

#include "test_util.h"
#include "tog/synthetic.h"

namespace tog {
namespace {

using testing::RandomFeatureMap;

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

FeatureMap Shifted(const FeatureMap& src, int du, int dv) {
  FeatureMap out(src.height(), src.width(), src.channels());
  std::vector<std::uint8_t> mask(src.num_pixels(), 0);
  for (int v = 0; v < src.height(); ++v) {
    for (int u = 0; u < src.width(); ++u) {
      const int su = u - du, sv = v - dv;
      if (su < 0 || sv < 0 || su >= src.width() || sv >= src.height()) continue;
      out.At(u, v) = src.At(su, sv);
      mask[std::size_t(v) * src.width() + u] = 1;
    }
  }
  out.set_mask(std::move(mask));
  return out;
}

// Peak-centred soft-argmax over the 3x3 neighbourhood, computed directly.
Pixeld SoftArgmaxOracle(const FeatureMap& target, const Eigen::VectorXd& query,
                        int cu, int cv, double tau) {
  double peak = -2.0;
  for (int v = 0; v < target.height(); ++v) {
    for (int u = 0; u < target.width(); ++u) {
      if (!target.InMask(u, v)) continue;
      peak = std::max(peak, CosineSimilarity(target.At(u, v), query));
    }
  }
  double wsum = 0.0, su = 0.0, sv = 0.0;
  for (int v = cv - 1; v <= cv + 1; ++v) {
    for (int u = cu - 1; u <= cu + 1; ++u) {
      if (!target.InMask(u, v)) continue;
      const double w =
          std::exp((CosineSimilarity(target.At(u, v), query) - peak) / tau);
      wsum += w;
      su += w * u;
      sv += w * v;
    }
  }
  return Pixeld(su / wsum, sv / wsum);
}

TEST(TransferPoint, IdenticalMapsReturnSamePixel) {
  std::mt19937_64 rng(1);
  const FeatureMap fm = RandomFeatureMap(rng, 16, 16, 32);
  for (int v = 1; v < 15; v += 3) {
    for (int u = 1; u < 15; u += 3) {
      const PointTransfer t = TransferPoint(fm, Pixeld(u, v), fm);
      const Pixeld oracle =
          SoftArgmaxOracle(fm, fm.At(u, v).cast<double>(), u, v, 0.05);
      EXPECT_LT((t.target_px - oracle).norm(), 1e-9);
      EXPECT_LT((t.target_px - Pixeld(u, v)).norm(), 1e-3);
      EXPECT_NEAR(t.confidence, 1.0, 1e-6);
    }
  }
}

TEST(TransferPoint, ExactWithoutMaskedNeighbours) {
  std::mt19937_64 rng(11);
  FeatureMap fm = RandomFeatureMap(rng, 16, 16, 32);
  std::vector<std::uint8_t> mask(fm.num_pixels(), 0);
  for (int v = 1; v < 16; v += 3) {
    for (int u = 1; u < 16; u += 3) mask[std::size_t(v) * 16 + u] = 1;
  }
  fm.set_mask(mask);
  for (int v = 1; v < 16; v += 3) {
    for (int u = 1; u < 16; u += 3) {
      EXPECT_LT((TransferPoint(fm, Pixeld(u, v), fm).target_px - Pixeld(u, v))
                    .norm(),
                1e-12);
    }
  }
}

TEST(TransferPoint, RecoversPlantedShift) {
  std::mt19937_64 rng(2);
  const FeatureMap src = RandomFeatureMap(rng, 20, 24, 32);
  const FeatureMap tgt = Shifted(src, 3, -2);
  for (int i = 0; i < 20; ++i) {
    const Pixeld p(4 + i % 10, 5 + i % 9);
    const PointTransfer t = TransferPoint(src, p, tgt);
    EXPECT_LT((t.target_px - (p + Pixeld(3, -2))).norm(), 0.5);
  }
}

TEST(TransferPoint, HonoursImageScale) {
  std::mt19937_64 rng(3);
  FeatureMap src = RandomFeatureMap(rng, 12, 16, 16);
  FeatureMap tgt = Shifted(src, 2, 1);
  const Pixeld grid = TransferPoint(src, Pixeld(5, 4), tgt).target_px;
  EXPECT_LT((grid - Pixeld(7, 5)).norm(), 1e-3);
  src.SetImageSize(64, 48);
  tgt.SetImageSize(64, 48);
  const PointTransfer t = TransferPoint(src, Pixeld(20, 16), tgt);
  EXPECT_LT((t.target_px - 4.0 * grid).norm(), 1e-12);
}

TEST(TransferPoint, Errors) {
  FeatureMap a(4, 4, 2), b(4, 4, 2);
  for (int v = 0; v < 4; ++v) {
    for (int u = 0; u < 4; ++u) {
      a.At(u, v) << 1, 0;
      b.At(u, v) << 0, 1;
    }
  }
  EXPECT_EQ(CodeOf([&] { TransferPoint(a, Pixeld(1, 1), b); }),
            ErrorCode::kLowConfidenceMatch);
  EXPECT_EQ(CodeOf([&] { TransferPoint(a, Pixeld(7, 1), a); }),
            ErrorCode::kOutOfBounds);
  FeatureMap masked = a;
  masked.set_mask(std::vector<std::uint8_t>(16, 0));
  EXPECT_EQ(CodeOf([&] { TransferPoint(a, Pixeld(1, 1), masked); }),
            ErrorCode::kEmptyMask);
  EXPECT_EQ(CodeOf([&] { TransferPoint(masked, Pixeld(1, 1), a); }),
            ErrorCode::kOutOfBounds);
  EXPECT_EQ(CodeOf([&] { TransferPoint(a, Pixeld(1, 1), FeatureMap(4, 4, 3)); }),
            ErrorCode::kDimensionMismatch);
}

std::set<std::pair<std::pair<int, int>, std::pair<int, int>>> OracleBuddies(
    const FeatureMap& a, const FeatureMap& b) {
  const auto pa = a.MaskedPixels(), pb = b.MaskedPixels();
  auto sim = [&](const Eigen::Vector2i& x, const Eigen::Vector2i& y) {
    return CosineSimilarity(a.At(x.x(), x.y()), b.At(y.x(), y.y()));
  };
  std::set<std::pair<std::pair<int, int>, std::pair<int, int>>> out;
  for (const auto& x : pa) {
    Eigen::Vector2i best_y = pb[0];
    for (const auto& y : pb) {
      if (sim(x, y) > sim(x, best_y)) best_y = y;
    }
    Eigen::Vector2i best_x = pa[0];
    for (const auto& z : pa) {
      if (sim(z, best_y) > sim(best_x, best_y)) best_x = z;
    }
    if (best_x == x) {
      out.insert({{x.x(), x.y()}, {best_y.x(), best_y.y()}});
    }
  }
  return out;
}

TEST(MatchBestBuddies, MatchesBruteForceOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const FeatureMap a = RandomFeatureMap(rng, 8, 8, 8, 0.7);
    const FeatureMap b = RandomFeatureMap(rng, 8, 8, 8, 0.7);
    const auto matches = MatchBestBuddies(a, b);
    std::set<std::pair<std::pair<int, int>, std::pair<int, int>>> got;
    for (const auto& m : matches) {
      got.insert({{int(m.source_px.x()), int(m.source_px.y())},
                  {int(m.target_px.x()), int(m.target_px.y())}});
    }
    EXPECT_EQ(got, OracleBuddies(a, b));
    EXPECT_LE(matches.size(),
              std::min(a.MaskedPixels().size(), b.MaskedPixels().size()));
    for (std::size_t i = 1; i < matches.size(); ++i) {
      EXPECT_GE(matches[i - 1].similarity, matches[i].similarity);
    }
  }
}

TEST(MatchBestBuddies, SymmetricUnderSwap) {
  std::mt19937_64 rng(5);
  const FeatureMap a = RandomFeatureMap(rng, 10, 10, 8);
  const FeatureMap b = RandomFeatureMap(rng, 10, 10, 8);
  std::set<std::pair<std::pair<double, double>, std::pair<double, double>>> ab,
      ba;
  for (const auto& m : MatchBestBuddies(a, b)) {
    ab.insert({{m.source_px.x(), m.source_px.y()},
               {m.target_px.x(), m.target_px.y()}});
  }
  for (const auto& m : MatchBestBuddies(b, a)) {
    ba.insert({{m.target_px.x(), m.target_px.y()},
               {m.source_px.x(), m.source_px.y()}});
  }
  EXPECT_EQ(ab, ba);
}

TEST(MatchBestBuddies, IdenticalMapsMatchEveryPixel) {
  std::mt19937_64 rng(6);
  const FeatureMap a = RandomFeatureMap(rng, 6, 7, 16);
  const auto matches = MatchBestBuddies(a, a);
  ASSERT_EQ(matches.size(), 42u);
  for (const auto& m : matches) EXPECT_EQ(m.source_px, m.target_px);
}

TEST(WindowMedianDepth, IgnoresMissingAndOutliers) {
  DepthMap d(10, 10);
  for (int v = 2; v <= 6; ++v) {
    for (int u = 2; u <= 6; ++u) d.At(u, v) = 1.0f;
  }
  d.At(4, 4) = 9.0f;  // 24 ones and a single spike
  EXPECT_EQ(WindowMedianDepth(d, Pixeld(4, 4)), 1.0);
  EXPECT_EQ(WindowMedianDepth(d, Pixeld(4.4, 3.6)), 1.0);
  d.At(2, 2) = 0.0f;  // even count averages the middle pair
  d.At(2, 3) = 3.0f;
  EXPECT_EQ(WindowMedianDepth(d, Pixeld(4, 4)), 1.0);
  EXPECT_FALSE(WindowMedianDepth(DepthMap(10, 10), Pixeld(4, 4)).has_value());
  DepthMap pair(1, 2);
  pair.At(0, 0) = 1.0f;
  pair.At(1, 0) = 2.0f;
  EXPECT_EQ(WindowMedianDepth(pair, Pixeld(0, 0), 3), 1.5);
  EXPECT_FALSE(WindowMedianDepth(d, Pixeld(40, 40)).has_value());
}

TEST(LiftCorrespondences, BackprojectsAndDropsMissing) {
  const CameraIntrinsicsd K{50, 50, 10, 10, 20, 20};
  DepthMap d(20, 20);
  for (int v = 0; v < 10; ++v) {
    for (int u = 0; u < 20; ++u) d.At(u, v) = 2.0f;
  }
  std::vector<Correspondence2D2D> matches;
  for (int i = 0; i < 6; ++i) {
    matches.push_back({Pixeld(i, i), Pixeld(3 * i, 2), 1.0});
  }
  matches.push_back({Pixeld(1, 1), Pixeld(5, 18), 1.0});
  const auto lifted = LiftCorrespondences(matches, d, K, 3);
  ASSERT_EQ(lifted.size(), 6u);
  for (std::size_t i = 0; i < lifted.size(); ++i) {
    EXPECT_EQ(lifted[i].source_px, matches[i].source_px);
    EXPECT_EQ(lifted[i].target_point,
              Backproject(K, matches[i].target_px, 2.0));
  }
  matches.resize(3);
  EXPECT_EQ(CodeOf([&] { LiftCorrespondences(matches, d, K, 3); }),
            ErrorCode::kTooFewLifted);
}

TEST(TransferDirection, Examples) {
  PnPResult pnp;
  EXPECT_EQ(TransferDirection(pnp, Direction3d(0, 0, 1)), Direction3d(0, 0, 1));
  pnp.transform.rotation =
      Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  EXPECT_LT((TransferDirection(pnp, Direction3d(1, 0, 0)) -
             Direction3d(0, -1, 0))
                .norm(),
            1e-12);
  pnp.transform.translation = Point3d(5, 5, 5);
  EXPECT_LT((TransferDirection(pnp, Direction3d(2, 0, 0)) -
             Direction3d(0, -1, 0))
                .norm(),
            1e-12);
}

struct IdentityScene {
  MemoryInstance instance;
  FeatureMap features;
  DepthMap depth;
  CameraIntrinsicsd K{60, 60, 16, 12, 32, 24};
};

IdentityScene MakeIdentityScene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  IdentityScene s;
  s.features = RandomFeatureMap(rng, 24, 32, 32);
  s.features.SetImageSize(32, 24);
  s.depth = DepthMap(24, 32);
  for (float& d : s.depth.depth) d = 1.0f;
  s.instance.id = "identity";
  s.instance.tog_position = Pixeld(11, 7);
  s.instance.tog_direction = Direction3d(0.0, 0.6, 0.8);
  s.instance.intrinsics = s.K;
  return s;
}

TEST(TransferConstraints, IdentityScene) {
  const IdentityScene s = MakeIdentityScene(7);
  const TransferResult r = TransferConstraints(s.instance, s.features,
                                               s.features, s.depth, s.K);
  EXPECT_LT((r.constraint.position_px - s.instance.tog_position).norm(), 1e-6);
  EXPECT_LT((r.constraint.position -
             Backproject(s.K, s.instance.tog_position, 1.0))
                .norm(),
            1e-6);
  EXPECT_LT(AngleBetween(r.constraint.direction, s.instance.tog_direction),
            1e-6);
  EXPECT_EQ(r.num_matches, 32 * 24);
  EXPECT_EQ(r.num_lifted, 32 * 24);
}

TEST(TransferConstraints, MissingDepthAtGraspPoint) {
  IdentityScene s = MakeIdentityScene(8);
  for (int v = 4; v <= 10; ++v) {
    for (int u = 8; u <= 14; ++u) s.depth.At(u, v) = 0.0f;
  }
  EXPECT_EQ(CodeOf([&] {
              TransferConstraints(s.instance, s.features, s.features, s.depth,
                                  s.K);
            }),
            ErrorCode::kMissingDepthAtGraspPoint);
}

TEST(TransferConstraints, RotatedSyntheticScene) {
  SceneSpec spec;
  spec.pose_magnitude = 0.5;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SyntheticScene scene = GenerateScene(seed, spec);
    const TransferResult r = TransferConstraints(
        scene.memory_instance, scene.memory_feature_map,
        scene.target_feature_map, scene.target_depth, scene.target_intrinsics);
    EXPECT_LT(AngleBetween(r.constraint.direction, scene.truth.v_b),
              M_PI / 180.0);
    EXPECT_LT((r.constraint.position - scene.truth.p_b).norm(), 2e-3);
  }
}

TEST(Constraint, JsonRoundTrip) {
  const IdentityScene s = MakeIdentityScene(9);
  const TransferResult r = TransferConstraints(s.instance, s.features,
                                               s.features, s.depth, s.K);
  const TogConstraint3D c = ConstraintFromJson(ConstraintToJson(r));
  EXPECT_EQ(c.position, r.constraint.position);
  EXPECT_LT((c.direction - r.constraint.direction).norm(), 1e-15);
  EXPECT_EQ(c.position_px, r.constraint.position_px);

  EXPECT_EQ(CodeOf([] { ConstraintFromJson("{}"); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([] {
              ConstraintFromJson(R"({"p_B":[1,2],"v_B":[0,0,1],"p_B_px":[1,1]})");
            }),
            ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace tog
