#include "tog/memory.h"

#include <fstream>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "test_util.h"

namespace tog {
namespace {

using testing::ScopedTempDir;

CameraIntrinsicsd TestIntrinsics() { return {300, 300, 160, 120, 320, 240}; }

EmbeddingVector RandomEmbedding(std::mt19937_64& rng, int dim, Modality m) {
  std::normal_distribution<float> normal;
  EmbeddingVector e;
  e.modality = m;
  e.values.resize(dim);
  for (int i = 0; i < dim; ++i) e.values(i) = normal(rng);
  e.values.normalize();
  return e;
}

MemoryInstance RandomInstance(std::mt19937_64& rng, const std::string& id) {
  std::uniform_real_distribution<double> u(0, 319), v(0, 239);
  std::normal_distribution<double> normal;
  MemoryInstance inst;
  inst.id = id;
  inst.image_ref = id + ".png";
  inst.tog_position = Pixeld(u(rng), v(rng));
  inst.tog_direction =
      Direction3d(normal(rng), normal(rng), normal(rng)).normalized();
  inst.task_text = "pour with " + id;
  inst.image_embedding = RandomEmbedding(rng, 16, Modality::kImage);
  inst.text_embedding = RandomEmbedding(rng, 16, Modality::kText);
  inst.feature_map_ref = id + ".rtaf";
  inst.intrinsics = TestIntrinsics();
  inst.contact_covariance << 4.0, 1.5, 1.5, 2.0;
  return inst;
}

TEST(FitContactMean, MatchesLongDoubleOracle) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 3.0);
  std::vector<Pixeld> pts;
  for (int i = 0; i < 100; ++i) {
    pts.emplace_back(200.0 + noise(rng), 150.0 + noise(rng));
  }
  long double su = 0, sv = 0;
  for (const auto& p : pts) {
    su += p.x();
    sv += p.y();
  }
  const Pixeld mean = FitContactMean(pts);
  EXPECT_NEAR(mean.x(), double(su / 100), 1e-6);
  EXPECT_NEAR(mean.y(), double(sv / 100), 1e-6);

  long double cuu = 0, cuv = 0, cvv = 0;
  for (const auto& p : pts) {
    const long double du = p.x() - su / 100, dv = p.y() - sv / 100;
    cuu += du * du;
    cuv += du * dv;
    cvv += dv * dv;
  }
  const Eigen::Matrix2d cov = FitContactCovariance(pts);
  EXPECT_NEAR(cov(0, 0), double(cuu / 100), 1e-9);
  EXPECT_NEAR(cov(0, 1), double(cuv / 100), 1e-9);
  EXPECT_NEAR(cov(1, 0), double(cuv / 100), 1e-9);
  EXPECT_NEAR(cov(1, 1), double(cvv / 100), 1e-9);
}

TEST(FitContactMean, EmptyThrows) {
  EXPECT_THROW(FitContactMean({}), Error);
}

TEST(EstimateApproachDirection, NoisyLineWithinFiveDegrees) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 200; ++trial) {
    const Direction3d truth =
        Direction3d(normal(rng), normal(rng), normal(rng)).normalized();
    const Point3d start(normal(rng) * 0.1, normal(rng) * 0.1, 0.6);
    std::vector<Point3d> traj;
    for (int i = 0; i < 20; ++i) {
      traj.push_back(start + truth * (0.01 * i) +
                     0.001 * Point3d(normal(rng), normal(rng), normal(rng)));
    }
    const Direction3d est = EstimateApproachDirection(traj);
    EXPECT_NEAR(est.norm(), 1.0, 1e-12);
    EXPECT_LT(AngleBetween(est, truth), 5.0 * M_PI / 180.0);
  }
}

TEST(EstimateApproachDirection, OrientedFromFirstToLast) {
  const std::vector<Point3d> traj = {{0, 0, 1}, {0, 0, 0.9}, {0, 0, 0.8}};
  EXPECT_NEAR((EstimateApproachDirection(traj) - Direction3d(0, 0, -1)).norm(),
              0.0, 1e-12);
}

TEST(EstimateApproachDirection, InvariantToSubsampling) {
  std::vector<Point3d> traj;
  for (int i = 0; i < 40; ++i) {
    traj.emplace_back(0.002 * i, -0.001 * i, 0.5 + 0.003 * i);
  }
  std::vector<Point3d> every_other;
  for (std::size_t i = 0; i < traj.size(); i += 2) every_other.push_back(traj[i]);
  EXPECT_LT(AngleBetween(EstimateApproachDirection(traj),
                         EstimateApproachDirection(every_other)),
            1e-9);
}

TEST(EstimateApproachDirection, Degenerate) {
  const std::vector<Point3d> one = {{0, 0, 1}};
  const std::vector<Point3d> same = {{0, 0, 1}, {0, 0, 1}, {0, 0, 1}};
  for (const auto* traj : {&one, &same}) {
    try {
      EstimateApproachDirection(*traj);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kDegenerateTrajectory);
    }
  }
}

TEST(FlipInstance, Involution) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    MemoryInstance inst = RandomInstance(rng, "demo" + std::to_string(i));
    inst.intrinsics_ref = "demo.intrinsics.txt";
    for (const Augmentation flip :
         {Augmentation::kHFlip, Augmentation::kVFlip}) {
      const MemoryInstance once = FlipInstance(inst, flip);
      EXPECT_EQ(once.augmentation, flip);
      const MemoryInstance twice = FlipInstance(once, flip);
      EXPECT_EQ(twice.id, inst.id);
      EXPECT_EQ(twice.augmentation, Augmentation::kOriginal);
      EXPECT_NEAR((twice.tog_position - inst.tog_position).norm(), 0, 1e-9);
      EXPECT_NEAR((twice.tog_direction - inst.tog_direction).norm(), 0, 1e-12);
      EXPECT_NEAR(twice.intrinsics.cx, inst.intrinsics.cx, 1e-9);
      EXPECT_NEAR(twice.intrinsics.cy, inst.intrinsics.cy, 1e-9);
      EXPECT_EQ(twice.contact_covariance, inst.contact_covariance);
    }
  }
}

TEST(FlipInstance, MirrorsPositionDirectionAndPrincipalPoint) {
  std::mt19937_64 rng(4);
  MemoryInstance inst = RandomInstance(rng, "cup");
  inst.tog_position = Pixeld(10, 20);
  inst.tog_direction = Direction3d(0.6, 0.0, 0.8);
  inst.intrinsics.cx = 150;
  const auto flips = AugmentFlips(inst);
  ASSERT_EQ(flips.size(), 2u);
  EXPECT_EQ(flips[0].id, "cup#hflip");
  EXPECT_EQ(flips[0].tog_position, Pixeld(309, 20));
  EXPECT_EQ(flips[0].tog_direction, Direction3d(-0.6, 0.0, 0.8));
  EXPECT_EQ(flips[0].intrinsics.cx, 169);
  EXPECT_EQ(flips[0].contact_covariance(0, 1), -1.5);
  EXPECT_EQ(flips[1].id, "cup#vflip");
  EXPECT_EQ(flips[1].tog_position, Pixeld(10, 219));
  EXPECT_EQ(flips[1].intrinsics.cy, 119);
  // A flipped projection of a flipped point matches.
  const Point3d p(0.1, -0.05, 0.7);
  const Pixeld orig = Project(inst.intrinsics, p);
  const Pixeld mirrored =
      Project(flips[0].intrinsics, Point3d(-p.x(), p.y(), p.z()));
  EXPECT_NEAR(mirrored.x(), 319 - orig.x(), 1e-9);
  EXPECT_NEAR(mirrored.y(), orig.y(), 1e-9);
}

TEST(FlipInstance, AlreadyAugmented) {
  std::mt19937_64 rng(5);
  const MemoryInstance h =
      FlipInstance(RandomInstance(rng, "a"), Augmentation::kHFlip);
  for (const auto& f : {std::function<void()>([&] { AugmentFlips(h); }),
                        std::function<void()>([&] {
                          FlipInstance(h, Augmentation::kVFlip);
                        })}) {
    try {
      f();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kAlreadyAugmented);
    }
  }
}

TEST(MemoryStore, DuplicateIdRejected) {
  std::mt19937_64 rng(6);
  MemoryStore store;
  store.Add(RandomInstance(rng, "x"));
  EXPECT_THROW(store.Add(RandomInstance(rng, "x")), Error);
  EXPECT_NE(store.Find("x"), nullptr);
  EXPECT_EQ(store.Find("y"), nullptr);
}

TEST(MemoryStore, SaveLoadRoundTrip) {
  std::mt19937_64 rng(7);
  MemoryStore store;
  for (int i = 0; i < 5; ++i) {
    const MemoryInstance inst = RandomInstance(rng, "m" + std::to_string(i));
    store.Add(inst);
    for (auto& f : AugmentFlips(inst)) store.Add(std::move(f));
  }
  ScopedTempDir dir;
  SaveStore(store, dir.File("index.json"));
  const MemoryStore back = LoadStore(dir.File("index.json"));
  ASSERT_EQ(back.instances.size(), 15u);
  for (std::size_t i = 0; i < back.instances.size(); ++i) {
    EXPECT_EQ(back.instances[i], store.instances[i]) << i;
  }
}

TEST(MemoryStore, SchemaMismatch) {
  ScopedTempDir dir;
  {
    std::ofstream out(dir.File("index.json"));
    out << R"({"schema_version": 7, "instances": []})";
  }
  try {
    LoadStore(dir.File("index.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchemaVersionMismatch);
  }
}

TEST(BuildInstance, FromRecordFile) {
  ScopedTempDir dir;
  WriteIntrinsics(TestIntrinsics(), dir.File("cam.txt"));
  {
    std::ofstream out(dir.File("rec.json"));
    out << R"({"image_ref": "rec.png",
               "contact_points": [[100, 50], [102, 54]],
               "contact_frame_index": 3,
               "wrist_trajectory": [[0, 0, 1], [0, 0.1, 1]],
               "task_text": "hand over",
               "intrinsics_ref": "cam.txt"})";
  }
  const DemonstrationRecord rec = ReadDemonstrationRecord(dir.File("rec.json"));
  EXPECT_EQ(rec.contact_frame_index, 3);
  EXPECT_EQ(rec.intrinsics, TestIntrinsics());
  std::mt19937_64 rng(8);
  InstanceArtifacts art;
  art.image_embedding = RandomEmbedding(rng, 8, Modality::kImage);
  art.text_embedding = RandomEmbedding(rng, 8, Modality::kText);
  const MemoryInstance inst = BuildInstance(rec, "rec", art);
  EXPECT_EQ(inst.tog_position, Pixeld(101, 52));
  EXPECT_NEAR((inst.tog_direction - Direction3d(0, 1, 0)).norm(), 0, 1e-12);
  EXPECT_EQ(inst.task_text, "hand over");

  DemonstrationRecord outside = rec;
  outside.contact_points = {{400, 10}};
  EXPECT_THROW(BuildInstance(outside, "o", art), Error);
}

}  // namespace
}  // namespace tog
