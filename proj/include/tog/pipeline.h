#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tog/alignment.h"
#include "tog/retrieval.h"
#include "tog/synthetic.h"
#include "tog/transfer.h"

namespace tog {

struct PipelineConfig {
  std::string memory_index_path;
  std::string output_dir = ".";

  RetrievalOptions retrieval;
  std::string reranker_cmd;

  TransferOptions transfer;
  ScoringParamsd scoring;
};

// TOML-style `key = value` lines with [retrieval], [transfer] and [scoring]
// sections. Unknown keys and out-of-range values throw kInvalidArgument.
PipelineConfig ParseConfig(const std::string& text);
PipelineConfig ReadConfig(const std::string& path);
std::string FormatConfig(const PipelineConfig& config);
void ValidateConfig(const PipelineConfig& config);

// Target-side inputs, loaded from a query JSON:
// {task_text, image_embedding_ref, text_embedding_ref,
//  target_feature_map_ref, target_image_ref, depth_ref, intrinsics_ref}.
struct QueryInputs {
  Query query;
  DepthMap depth;
  CameraIntrinsicsd intrinsics;
};

QueryInputs ReadQueryInputs(const std::string& path);

// A stage failure, tagged with the stage name ("memory", "retrieval",
// "transfer", "alignment").
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), stage + ": " + cause.what(), VerbatimMessage{}),
        stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunReport {
  std::map<std::string, double> timings_ms;
  std::string retrieved_instance_id;
  std::vector<RankedCandidate> imd_table;
  std::optional<TransferResult> transfer;
  std::optional<GraspSelection> selection;
  std::vector<std::string> warnings;
  std::string effective_config;
};

inline constexpr int kReportSchemaVersion = 1;

std::string RunReportToJson(const RunReport& report);

// In-process retrieval -> transfer -> alignment. Throws StageError.
RunReport RunGrasp(const MemoryStore& store, const QueryInputs& inputs,
                   const std::vector<GraspCandidated>& candidates,
                   const PipelineConfig& config);

struct BuildMemorySummary {
  int valid_records = 0;
  int instances = 0;
  std::vector<std::string> warnings;
};

// Reads every *.json demonstration record in records_dir. Exporter outputs
// are looked up next to each record as <stem>.rtaf, <stem>.image.rtae,
// <stem>.text.rtae, and <stem>.{hflip,vflip}.* for the flipped views.
BuildMemorySummary BuildMemory(const std::string& records_dir,
                               const std::string& index_path);

PipelineOutput ToPipelineOutput(const RunReport& report);

}  // namespace tog
