#include "tog/retrieval.h"

#include <algorithm>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "test_util.h"

namespace tog {
namespace {

using testing::RandomFeatureMap;

EmbeddingVector RandomEmbedding(std::mt19937_64& rng, int dim) {
  std::normal_distribution<float> normal;
  EmbeddingVector e;
  e.values.resize(dim);
  for (int i = 0; i < dim; ++i) e.values(i) = normal(rng);
  e.values.normalize();
  return e;
}

MemoryStore RandomStore(std::mt19937_64& rng, int n, int dim = 32) {
  MemoryStore store;
  for (int i = 0; i < n; ++i) {
    MemoryInstance inst;
    inst.id = "inst" + std::to_string(100 + i);
    inst.image_ref = inst.id + ".png";
    inst.task_text = "task " + std::to_string(i);
    inst.image_embedding = RandomEmbedding(rng, dim);
    inst.text_embedding = RandomEmbedding(rng, dim);
    store.Add(std::move(inst));
  }
  return store;
}

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

class FixedReRanker : public ReRanker {
 public:
  explicit FixedReRanker(std::vector<std::string> ids) : ids_(std::move(ids)) {}
  std::vector<std::string> Rerank(const std::string&,
                                  const std::vector<RankedCandidate>&,
                                  const MemoryStore&, int) override {
    if (throw_) throw std::runtime_error("backend down");
    return ids_;
  }
  bool throw_ = false;

 private:
  std::vector<std::string> ids_;
};

TEST(SemanticCoarseRank, MatchesOracle) {
  std::mt19937_64 rng(1);
  const MemoryStore store = RandomStore(rng, 40);
  for (const double alpha : {0.0, 0.3, 0.5, 1.0}) {
    Query q;
    q.image_embedding = RandomEmbedding(rng, 32);
    q.text_embedding = RandomEmbedding(rng, 32);
    std::vector<std::pair<double, std::string>> oracle;
    for (const auto& inst : store.instances) {
      const double s =
          alpha * q.image_embedding.values.cast<double>().dot(
                      inst.image_embedding.values.cast<double>()) +
          (1 - alpha) * q.text_embedding.values.cast<double>().dot(
                            inst.text_embedding.values.cast<double>());
      oracle.emplace_back(-s, inst.id);
    }
    std::sort(oracle.begin(), oracle.end());
    const auto ranked = SemanticCoarseRank(q, store, 10, alpha);
    ASSERT_EQ(ranked.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) {
      EXPECT_EQ(ranked[i].instance_id, oracle[i].second);
      EXPECT_NEAR(ranked[i].semantic_score, -oracle[i].first, 1e-6);
      EXPECT_FALSE(ranked[i].imd.has_value());
    }
  }
}

TEST(SemanticCoarseRank, TiesByIdAndErrors) {
  std::mt19937_64 rng(2);
  MemoryStore store = RandomStore(rng, 3);
  for (auto& inst : store.instances) {
    inst.image_embedding = store.instances[0].image_embedding;
    inst.text_embedding = store.instances[0].text_embedding;
  }
  std::swap(store.instances[0], store.instances[2]);
  Query q;
  q.image_embedding = store.instances[0].image_embedding;
  q.text_embedding = store.instances[0].text_embedding;
  const auto ranked = SemanticCoarseRank(q, store, 20);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].instance_id, "inst100");
  EXPECT_EQ(ranked[2].instance_id, "inst102");

  EXPECT_EQ(CodeOf([&] { SemanticCoarseRank(q, MemoryStore{}, 5); }),
            ErrorCode::kEmptyStore);
  EXPECT_EQ(CodeOf([&] { SemanticCoarseRank(q, store, 0); }),
            ErrorCode::kInvalidArgument);
}

TEST(ComputeImd, SelfDistanceIsZero) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const FeatureMap fm = RandomFeatureMap(rng, 8, 8, 16, 0.5);
    EXPECT_NEAR(ComputeImd(fm, fm), 0.0, 1e-9);
  }
}

TEST(ComputeImd, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const FeatureMap a = RandomFeatureMap(rng, 2, 2, 8);
    const FeatureMap b = RandomFeatureMap(rng, 2, 2, 8);
    double total = 0.0;
    for (int va = 0; va < 2; ++va) {
      for (int ua = 0; ua < 2; ++ua) {
        double best = 1e300;
        for (int vb = 0; vb < 2; ++vb) {
          for (int ub = 0; ub < 2; ++ub) {
            best = std::min(best, 1.0 - CosineSimilarity(a.At(ua, va),
                                                         b.At(ub, vb)));
          }
        }
        total += best;
      }
    }
    EXPECT_NEAR(ComputeImd(a, b), total / 4, 1e-6);
  }
}

TEST(ComputeImd, IsDirectional) {
  // Source has one feature the target lacks; the reverse direction is exact.
  FeatureMap a(1, 2, 2, {1, 0, 0, 1});
  FeatureMap b(1, 1, 2, {1, 0});
  EXPECT_NEAR(ComputeImd(a, b), 0.5, 1e-12);
  EXPECT_NEAR(ComputeImd(b, a), 0.0, 1e-12);
}

TEST(ComputeImd, Errors) {
  std::mt19937_64 rng(5);
  const FeatureMap a = RandomFeatureMap(rng, 3, 3, 4);
  const FeatureMap b = RandomFeatureMap(rng, 3, 3, 5);
  EXPECT_EQ(CodeOf([&] { ComputeImd(a, b); }), ErrorCode::kDimensionMismatch);
  FeatureMap empty = a;
  empty.set_mask(std::vector<std::uint8_t>(9, 0));
  EXPECT_EQ(CodeOf([&] { ComputeImd(empty, a); }), ErrorCode::kEmptyMask);
}

TEST(GeometricSelect, PicksLeastDistorted) {
  std::mt19937_64 rng(6);
  const MemoryStore store = RandomStore(rng, 4);
  Query q;
  q.target_feature_map = RandomFeatureMap(rng, 6, 6, 16, 0.7);
  std::map<std::string, FeatureMap> maps;
  for (const auto& inst : store.instances) {
    maps[inst.id] = RandomFeatureMap(rng, 6, 6, 16, 0.7);
  }
  maps["inst102"] = q.target_feature_map;
  std::vector<RankedCandidate> cands;
  for (const auto& inst : store.instances) cands.push_back({inst.id, 0.0, {}});
  const RankedCandidate best =
      GeometricSelect(cands, store, q, [&](const MemoryInstance& inst) {
        return maps.at(inst.id);
      });
  EXPECT_EQ(best.instance_id, "inst102");
  EXPECT_NEAR(*best.imd, 0.0, 1e-9);
  for (const auto& c : cands) {
    ASSERT_TRUE(c.imd.has_value());
    EXPECT_NEAR(*c.imd, ComputeImd(maps.at(c.instance_id), q.target_feature_map),
                1e-12);
  }
}

TEST(ParseReRankReply, AcceptsSubsetInOrder) {
  const std::vector<RankedCandidate> cands = {{"a", 0, {}}, {"b", 0, {}},
                                              {"c", 0, {}}};
  EXPECT_EQ(ParseReRankReply(R"({"ordered_ids": ["c", "a"]})", cands, 2),
            (std::vector<std::string>{"c", "a"}));
}

TEST(ParseReRankReply, RejectsMalformed) {
  const std::vector<RankedCandidate> cands = {{"a", 0, {}}, {"b", 0, {}},
                                              {"c", 0, {}}};
  for (const char* reply :
       {"", "nonsense", "{}", R"({"ordered_ids": "a"})",
        R"({"ordered_ids": ["z"]})", R"({"ordered_ids": ["a", "a"]})",
        R"({"ordered_ids": ["a", "b", "c"]})", R"({"ordered_ids": []})",
        R"({"ordered_ids": [1]})"}) {
    EXPECT_EQ(CodeOf([&] { ParseReRankReply(reply, cands, 2); }),
              ErrorCode::kReRankerFailure)
        << reply;
  }
}

TEST(Rerank, FallsBackToCoarseOrder) {
  std::mt19937_64 rng(7);
  const MemoryStore store = RandomStore(rng, 5);
  std::vector<RankedCandidate> cands;
  for (const auto& inst : store.instances) cands.push_back({inst.id, 0.5, {}});

  FixedReRanker good({"inst103", "inst101"});
  RerankOutcome ok = Rerank(good, "t", cands, store, 3);
  EXPECT_FALSE(ok.fell_back);
  ASSERT_EQ(ok.candidates.size(), 2u);
  EXPECT_EQ(ok.candidates[0].instance_id, "inst103");

  FixedReRanker unknown({"nobody"});
  FixedReRanker dup({"inst100", "inst100"});
  FixedReRanker too_long({"inst100", "inst101", "inst102", "inst103"});
  FixedReRanker empty({});
  FixedReRanker thrower({"inst100"});
  thrower.throw_ = true;
  for (FixedReRanker* r : {&unknown, &dup, &too_long, &empty, &thrower}) {
    const RerankOutcome out = Rerank(*r, "t", cands, store, 3);
    EXPECT_TRUE(out.fell_back);
    EXPECT_FALSE(out.failure.empty());
    ASSERT_EQ(out.candidates.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(out.candidates[i], cands[i]);
  }
}

TEST(Rerank, IdentityTakesFirstK) {
  std::mt19937_64 rng(8);
  const MemoryStore store = RandomStore(rng, 4);
  std::vector<RankedCandidate> cands;
  for (const auto& inst : store.instances) cands.push_back({inst.id, 0.0, {}});
  IdentityReRanker identity;
  const RerankOutcome out = Rerank(identity, "t", cands, store, 2);
  EXPECT_FALSE(out.fell_back);
  ASSERT_EQ(out.candidates.size(), 2u);
  EXPECT_EQ(out.candidates[1].instance_id, "inst101");
}

TEST(SubprocessReRanker, RoundTripsThroughShell) {
  std::mt19937_64 rng(9);
  const MemoryStore store = RandomStore(rng, 3);
  std::vector<RankedCandidate> cands;
  for (const auto& inst : store.instances) cands.push_back({inst.id, 0.0, {}});

  SubprocessReRanker echo(R"(cat >/dev/null; echo '{"ordered_ids": ["inst102"]}')");
  EXPECT_EQ(echo.Rerank("t", cands, store, 2),
            (std::vector<std::string>{"inst102"}));

  SubprocessReRanker failing("cat >/dev/null; exit 3");
  EXPECT_EQ(CodeOf([&] { failing.Rerank("t", cands, store, 2); }),
            ErrorCode::kReRankerFailure);
  const RerankOutcome out = Rerank(failing, "t", cands, store, 2);
  EXPECT_TRUE(out.fell_back);
  EXPECT_EQ(out.candidates.size(), 2u);
}

TEST(Retrieve, WarnsOnFallbackAndSkipsImdWhenDisabled) {
  std::mt19937_64 rng(10);
  const MemoryStore store = RandomStore(rng, 6);
  Query q;
  q.image_embedding = store.instances[4].image_embedding;
  q.text_embedding = store.instances[4].text_embedding;
  RetrievalOptions opts;
  opts.imd_enabled = false;
  FixedReRanker broken({"missing"});
  const RetrievalResult r =
      Retrieve(q, store, opts, broken, [](const MemoryInstance&) {
        ADD_FAILURE() << "loader called with IMD disabled";
        return FeatureMap();
      });
  EXPECT_EQ(r.selected.instance_id, "inst104");
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.reranked.size(), 5u);
}

}  // namespace
}  // namespace tog
