#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tog/feature_map.h"
#include "tog/memory.h"

namespace tog {

struct Query {
  EmbeddingVector image_embedding;
  EmbeddingVector text_embedding;
  std::string task_text;
  FeatureMap target_feature_map;
  std::string target_image_ref;
};

struct RankedCandidate {
  std::string instance_id;
  double semantic_score = 0.0;
  std::optional<double> imd;

  bool operator==(const RankedCandidate&) const = default;
};

struct RetrievalOptions {
  // Weight of the image cosine; the text cosine gets 1 - alpha.
  double alpha = 0.5;
  int coarse_m = 20;
  int top_k = 5;
  bool imd_enabled = true;
};

std::vector<RankedCandidate> SemanticCoarseRank(const Query& query,
                                                const MemoryStore& store,
                                                int m, double alpha = 0.5);

class ReRanker {
 public:
  virtual ~ReRanker() = default;
  // Returns instance ids, best first. May throw on failure.
  virtual std::vector<std::string> Rerank(
      const std::string& task_text, const std::vector<RankedCandidate>& cands,
      const MemoryStore& store, int k) = 0;
};

class IdentityReRanker : public ReRanker {
 public:
  std::vector<std::string> Rerank(const std::string& task_text,
                                  const std::vector<RankedCandidate>& cands,
                                  const MemoryStore& store, int k) override;
};

// Runs an external command through the shell. The JSON request
// {task_text, candidates:[{id, image_ref, task_text}], k} is fed on stdin
// and the reply {ordered_ids:[...]} read from stdout.
class SubprocessReRanker : public ReRanker {
 public:
  explicit SubprocessReRanker(std::string command)
      : command_(std::move(command)) {}

  std::vector<std::string> Rerank(const std::string& task_text,
                                  const std::vector<RankedCandidate>& cands,
                                  const MemoryStore& store, int k) override;

 private:
  std::string command_;
};

std::string MakeReRankRequest(const std::string& task_text,
                              const std::vector<RankedCandidate>& cands,
                              const MemoryStore& store, int k);
// Throws kReRankerFailure unless the reply is well-formed, a subset of the
// candidates, duplicate-free and at most k long.
std::vector<std::string> ParseReRankReply(
    const std::string& reply, const std::vector<RankedCandidate>& cands, int k);

struct RerankOutcome {
  std::vector<RankedCandidate> candidates;
  bool fell_back = false;
  std::string failure;
};

// Falls back to the first k candidates if the re-ranker fails.
RerankOutcome Rerank(ReRanker& reranker, const std::string& task_text,
                     const std::vector<RankedCandidate>& cands,
                     const MemoryStore& store, int k);

// Mean over source-mask pixels of the minimum cosine distance into the
// target mask. Directional: source is the memory candidate.
double ComputeImd(const FeatureMap& source, const FeatureMap& target);

using FeatureMapLoader = std::function<FeatureMap(const MemoryInstance&)>;

// Fills `imd` for every candidate and returns the one with the smallest IMD,
// ties by ascending id.
RankedCandidate GeometricSelect(std::vector<RankedCandidate>& cands,
                                const MemoryStore& store, const Query& query,
                                const FeatureMapLoader& load);

struct RetrievalResult {
  RankedCandidate selected;
  std::vector<RankedCandidate> coarse;
  std::vector<RankedCandidate> reranked;
  std::vector<std::string> warnings;
};

RetrievalResult Retrieve(const Query& query, const MemoryStore& store,
                         const RetrievalOptions& options, ReRanker& reranker,
                         const FeatureMapLoader& load);

// Reads the instance feature map from its ref (resolved against the store's
// index directory) and scales it to the instance intrinsics.
FeatureMap LoadInstanceFeatureMap(const MemoryStore& store,
                                  const MemoryInstance& instance);

}  // namespace tog
