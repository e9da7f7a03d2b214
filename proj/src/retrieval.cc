#include "tog/retrieval.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>

#include <unistd.h>

#include <json.hpp>

#include "binary_io.h"

namespace tog {
namespace {

using nlohmann::json;

bool ByScoreThenId(const RankedCandidate& a, const RankedCandidate& b) {
  if (a.semantic_score != b.semantic_score) {
    return a.semantic_score > b.semantic_score;
  }
  return a.instance_id < b.instance_id;
}

// Masked features as unit columns (C x N), in raster order.
Eigen::MatrixXd MaskedFeatureMatrix(const FeatureMap& fm) {
  const auto pixels = fm.MaskedPixels();
  Eigen::MatrixXd m(fm.channels(), static_cast<Eigen::Index>(pixels.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Eigen::VectorXd f = fm.At(pixels[i].x(), pixels[i].y()).cast<double>();
    const double n = f.norm();
    m.col(Eigen::Index(i)) = n > 0.0 ? Eigen::VectorXd(f / n) : f;
  }
  return m;
}

// Runs `command` with `input` on stdin; returns stdout. Throws on a nonzero
// exit status.
std::string RunCommand(const std::string& command, const std::string& input) {
  namespace fs = std::filesystem;
  const fs::path request =
      fs::temp_directory_path() /
      ("tog_rerank_" + std::to_string(::getpid()) + "_" +
       std::to_string(reinterpret_cast<std::uintptr_t>(&input)) + ".json");
  internal::WriteTextFile(request.string(), input);
  const std::string full = "(" + command + ") < '" + request.string() + "'";
  FILE* pipe = ::popen(full.c_str(), "r");
  if (pipe == nullptr) {
    fs::remove(request);
    throw Error(ErrorCode::kReRankerFailure, "cannot start re-ranker");
  }
  std::string output;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) {
    output.append(buf, n);
  }
  const int status = ::pclose(pipe);
  std::error_code ec;
  fs::remove(request, ec);
  if (status != 0) {
    throw Error(ErrorCode::kReRankerFailure,
                "re-ranker exited with status " + std::to_string(status));
  }
  return output;
}

}  // namespace

std::vector<RankedCandidate> SemanticCoarseRank(const Query& query,
                                                const MemoryStore& store, int m,
                                                double alpha) {
  if (store.instances.empty()) {
    throw Error(ErrorCode::kEmptyStore, "memory store is empty");
  }
  if (m < 1) {
    throw Error(ErrorCode::kInvalidArgument, "coarse_m must be >= 1");
  }
  std::vector<RankedCandidate> ranked;
  ranked.reserve(store.instances.size());
  for (const auto& inst : store.instances) {
    const double image_sim = CosineSimilarity(query.image_embedding.values,
                                              inst.image_embedding.values);
    const double text_sim = CosineSimilarity(query.text_embedding.values,
                                             inst.text_embedding.values);
    ranked.push_back(
        {inst.id, alpha * image_sim + (1.0 - alpha) * text_sim, std::nullopt});
  }
  std::sort(ranked.begin(), ranked.end(), ByScoreThenId);
  if (ranked.size() > std::size_t(m)) ranked.resize(std::size_t(m));
  return ranked;
}

std::vector<std::string> IdentityReRanker::Rerank(
    const std::string&, const std::vector<RankedCandidate>& cands,
    const MemoryStore&, int k) {
  std::vector<std::string> ids;
  for (const auto& c : cands) {
    if (int(ids.size()) >= k) break;
    ids.push_back(c.instance_id);
  }
  return ids;
}

std::string MakeReRankRequest(const std::string& task_text,
                              const std::vector<RankedCandidate>& cands,
                              const MemoryStore& store, int k) {
  json list = json::array();
  for (const auto& c : cands) {
    const MemoryInstance* inst = store.Find(c.instance_id);
    list.push_back({{"id", c.instance_id},
                    {"image_ref", inst ? inst->image_ref : ""},
                    {"task_text", inst ? inst->task_text : ""}});
  }
  return json{{"task_text", task_text}, {"candidates", list}, {"k", k}}.dump();
}

std::vector<std::string> ParseReRankReply(
    const std::string& reply, const std::vector<RankedCandidate>& cands,
    int k) {
  std::set<std::string> known;
  for (const auto& c : cands) known.insert(c.instance_id);
  std::vector<std::string> ids;
  try {
    const json j = json::parse(reply);
    const json& ordered = j.at("ordered_ids");
    if (!ordered.is_array()) {
      throw Error(ErrorCode::kReRankerFailure, "ordered_ids is not a list");
    }
    std::set<std::string> seen;
    for (const auto& id : ordered) {
      const std::string s = id.get<std::string>();
      if (!known.count(s)) {
        throw Error(ErrorCode::kReRankerFailure, "unknown id '" + s + "'");
      }
      if (!seen.insert(s).second) {
        throw Error(ErrorCode::kReRankerFailure, "duplicate id '" + s + "'");
      }
      ids.push_back(s);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kReRankerFailure,
                std::string("malformed reply: ") + e.what());
  }
  if (int(ids.size()) > k) {
    throw Error(ErrorCode::kReRankerFailure, "reply longer than k");
  }
  if (ids.empty()) {
    throw Error(ErrorCode::kReRankerFailure, "reply selects nothing");
  }
  return ids;
}

std::vector<std::string> SubprocessReRanker::Rerank(
    const std::string& task_text, const std::vector<RankedCandidate>& cands,
    const MemoryStore& store, int k) {
  const std::string reply =
      RunCommand(command_, MakeReRankRequest(task_text, cands, store, k));
  return ParseReRankReply(reply, cands, k);
}

RerankOutcome Rerank(ReRanker& reranker, const std::string& task_text,
                     const std::vector<RankedCandidate>& cands,
                     const MemoryStore& store, int k) {
  if (cands.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no candidates to re-rank");
  }
  RerankOutcome out;
  try {
    const auto ids = reranker.Rerank(task_text, cands, store, k);
    std::set<std::string> seen;
    for (const auto& id : ids) {
      const auto it =
          std::find_if(cands.begin(), cands.end(), [&](const auto& c) {
            return c.instance_id == id;
          });
      if (it == cands.end()) {
        throw Error(ErrorCode::kReRankerFailure, "unknown id '" + id + "'");
      }
      if (!seen.insert(id).second) {
        throw Error(ErrorCode::kReRankerFailure, "duplicate id '" + id + "'");
      }
      out.candidates.push_back(*it);
    }
    if (int(out.candidates.size()) > k || out.candidates.empty()) {
      throw Error(ErrorCode::kReRankerFailure, "reply size out of range");
    }
  } catch (const std::exception& e) {
    out.fell_back = true;
    out.failure = e.what();
    out.candidates.assign(
        cands.begin(), cands.begin() + std::min<std::size_t>(cands.size(), k));
  }
  return out;
}

double ComputeImd(const FeatureMap& source, const FeatureMap& target) {
  if (source.channels() != target.channels()) {
    throw Error(ErrorCode::kDimensionMismatch, "channel counts differ");
  }
  const Eigen::MatrixXd fs = MaskedFeatureMatrix(source);
  const Eigen::MatrixXd ft = MaskedFeatureMatrix(target);
  if (fs.cols() == 0 || ft.cols() == 0) {
    throw Error(ErrorCode::kEmptyMask, "IMD needs non-empty masks");
  }
  const Eigen::MatrixXd sim = fs.transpose() * ft;
  double total = 0.0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    total += std::max(0.0, 1.0 - sim.row(i).maxCoeff());
  }
  return total / static_cast<double>(sim.rows());
}

RankedCandidate GeometricSelect(std::vector<RankedCandidate>& cands,
                                const MemoryStore& store, const Query& query,
                                const FeatureMapLoader& load) {
  if (cands.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no candidates for geometric selection");
  }
  const RankedCandidate* best = nullptr;
  for (auto& c : cands) {
    const MemoryInstance* inst = store.Find(c.instance_id);
    if (inst == nullptr) {
      throw Error(ErrorCode::kInvalidArgument,
                  "candidate '" + c.instance_id + "' not in store");
    }
    c.imd = ComputeImd(load(*inst), query.target_feature_map);
    if (best == nullptr || *c.imd < *best->imd ||
        (*c.imd == *best->imd && c.instance_id < best->instance_id)) {
      best = &c;
    }
  }
  return *best;
}

RetrievalResult Retrieve(const Query& query, const MemoryStore& store,
                         const RetrievalOptions& options, ReRanker& reranker,
                         const FeatureMapLoader& load) {
  RetrievalResult result;
  result.coarse =
      SemanticCoarseRank(query, store, options.coarse_m, options.alpha);
  RerankOutcome rr =
      Rerank(reranker, query.task_text, result.coarse, store, options.top_k);
  if (rr.fell_back) {
    result.warnings.push_back("re-ranker failed, using coarse order: " +
                              rr.failure);
  }
  result.reranked = std::move(rr.candidates);
  if (options.imd_enabled) {
    result.selected = GeometricSelect(result.reranked, store, query, load);
  } else {
    result.selected = result.reranked.front();
  }
  return result;
}

FeatureMap LoadInstanceFeatureMap(const MemoryStore& store,
                                  const MemoryInstance& instance) {
  FeatureMap fm = ReadFeatureMap(internal::ResolvePath(
      internal::ParentDir(store.index_path), instance.feature_map_ref));
  fm.SetImageSize(instance.intrinsics.width, instance.intrinsics.height);
  return fm;
}

}  // namespace tog
