// Command-line front end for the grasp transfer pipeline.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tog/pipeline.h"
#include "tog/synthetic.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitStage = 4;

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool json = false;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

tog::PipelineConfig LoadConfig(const GlobalFlags& flags) {
  tog::PipelineConfig config;
  if (!flags.config_path.empty()) config = tog::ReadConfig(flags.config_path);
  if (flags.seed) config.transfer.pnp.ransac_seed = *flags.seed;
  if (!flags.out_dir.empty()) config.output_dir = flags.out_dir;
  return config;
}

std::string OutPath(const tog::PipelineConfig& config, const std::string& name) {
  fs::create_directories(config.output_dir);
  return (fs::path(config.output_dir) / name).string();
}

void WriteText(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) {
    throw tog::Error(tog::ErrorCode::kIoError, "cannot write " + path);
  }
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

std::string ReadText(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (f == nullptr) {
    throw tog::Error(tog::ErrorCode::kIoError, "cannot read " + path);
  }
  std::string text;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, n);
  std::fclose(f);
  return text;
}

tog::MemoryStore LoadMemory(const tog::PipelineConfig& config,
                            const std::string& override_path) {
  const std::string path =
      override_path.empty() ? config.memory_index_path : override_path;
  if (path.empty()) {
    throw UsageError("no memory index: pass --memory or set memory_index_path");
  }
  try {
    return tog::LoadStore(path);
  } catch (const tog::Error& e) {
    throw tog::StageError("memory", e);
  }
}

json CandidateJson(const tog::RankedCandidate& c) {
  return {{"id", c.instance_id},
          {"semantic_score", c.semantic_score},
          {"imd", c.imd ? json(*c.imd) : json(nullptr)}};
}

void Emit(const GlobalFlags& flags, const json& machine,
          const std::string& human) {
  if (flags.json) {
    std::cout << machine.dump(2) << "\n";
  } else {
    std::cout << human;
  }
}

int CmdBuildMemory(const GlobalFlags& flags, const std::string& records_dir,
                   const std::string& index_override) {
  const auto config = LoadConfig(flags);
  const std::string index =
      !index_override.empty() ? index_override
      : !config.memory_index_path.empty()
          ? config.memory_index_path
          : OutPath(config, "memory/index.json");
  const auto summary = tog::BuildMemory(records_dir, index);
  for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
  Emit(flags,
       {{"index", index},
        {"valid_records", summary.valid_records},
        {"instances", summary.instances},
        {"warnings", summary.warnings}},
       "wrote " + index + ": " + std::to_string(summary.instances) +
           " instances from " + std::to_string(summary.valid_records) +
           " records\n");
  return kExitOk;
}

int CmdRetrieve(const GlobalFlags& flags, const std::string& query_path,
                const std::string& memory) {
  const auto config = LoadConfig(flags);
  const auto store = LoadMemory(config, memory);
  const auto inputs = tog::ReadQueryInputs(query_path);
  tog::RetrievalResult result;
  try {
    std::unique_ptr<tog::ReRanker> reranker;
    if (config.reranker_cmd.empty()) {
      reranker = std::make_unique<tog::IdentityReRanker>();
    } else {
      reranker = std::make_unique<tog::SubprocessReRanker>(config.reranker_cmd);
    }
    result = tog::Retrieve(inputs.query, store, config.retrieval, *reranker,
                           [&](const tog::MemoryInstance& inst) {
                             return tog::LoadInstanceFeatureMap(store, inst);
                           });
  } catch (const tog::Error& e) {
    throw tog::StageError("retrieval", e);
  }
  json coarse = json::array();
  for (const auto& c : result.coarse) coarse.push_back(CandidateJson(c));
  json reranked = json::array();
  for (const auto& c : result.reranked) reranked.push_back(CandidateJson(c));
  const json out = {{"selected", result.selected.instance_id},
                    {"coarse", coarse},
                    {"reranked", reranked},
                    {"warnings", result.warnings}};
  WriteText(OutPath(config, "retrieval.json"), out.dump(2) + "\n");
  Emit(flags, out, "retrieved " + result.selected.instance_id + "\n");
  return kExitOk;
}

int CmdTransfer(const GlobalFlags& flags, const std::string& query_path,
                const std::string& memory, std::string instance_id,
                const std::string& retrieval_path) {
  const auto config = LoadConfig(flags);
  const auto store = LoadMemory(config, memory);
  const auto inputs = tog::ReadQueryInputs(query_path);
  if (instance_id.empty()) {
    if (retrieval_path.empty()) {
      throw UsageError("transfer needs --instance or --retrieval");
    }
    instance_id =
        json::parse(ReadText(retrieval_path)).at("selected").get<std::string>();
  }
  tog::TransferResult result;
  try {
    const tog::MemoryInstance* inst = store.Find(instance_id);
    if (inst == nullptr) {
      throw tog::Error(tog::ErrorCode::kInvalidArgument,
                       "unknown instance " + instance_id);
    }
    result = tog::TransferConstraints(
        *inst, tog::LoadInstanceFeatureMap(store, *inst),
        inputs.query.target_feature_map, inputs.depth, inputs.intrinsics,
        config.transfer);
  } catch (const tog::Error& e) {
    throw tog::StageError("transfer", e);
  }
  const std::string text = tog::ConstraintToJson(result);
  WriteText(OutPath(config, "constraint.json"), text);
  Emit(flags, json::parse(text),
       "transferred " + instance_id + " with " +
           std::to_string(result.pnp.inlier_indices.size()) + " inliers\n");
  return kExitOk;
}

int CmdAlign(const GlobalFlags& flags, const std::string& constraint_path,
             const std::string& candidates_path) {
  const auto config = LoadConfig(flags);
  tog::GraspSelection selection;
  try {
    const auto constraint = tog::ConstraintFromJson(ReadText(constraint_path));
    const auto candidates = tog::ReadCandidates(candidates_path);
    selection = tog::SelectGrasp(candidates, constraint.position,
                                 constraint.direction, config.scoring);
  } catch (const tog::Error& e) {
    throw tog::StageError("alignment", e);
  }
  const std::string text = tog::SelectionToJson(selection);
  WriteText(OutPath(config, "selection.json"), text);
  Emit(flags, json::parse(text),
       "selected candidate " + std::to_string(selection.index) + "\n");
  return kExitOk;
}

int CmdGrasp(const GlobalFlags& flags, const std::string& query_path,
             const std::string& candidates_path, const std::string& memory) {
  const auto config = LoadConfig(flags);
  const auto store = LoadMemory(config, memory);
  const auto inputs = tog::ReadQueryInputs(query_path);
  std::vector<tog::GraspCandidated> candidates;
  try {
    candidates = tog::ReadCandidates(candidates_path);
  } catch (const tog::Error& e) {
    throw tog::StageError("alignment", e);
  }
  const auto report = tog::RunGrasp(store, inputs, candidates, config);
  const std::string selection = tog::SelectionToJson(*report.selection);
  WriteText(OutPath(config, "selection.json"), selection);
  WriteText(OutPath(config, "report.json"), tog::RunReportToJson(report));
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  Emit(flags, json::parse(selection),
       "selected candidate " + std::to_string(report.selection->index) +
           " (instance " + report.retrieved_instance_id + ")\n");
  return kExitOk;
}

int CmdSynth(const GlobalFlags& flags, const tog::SceneSpec& spec) {
  if (flags.out_dir.empty()) throw UsageError("synth needs --out");
  const auto scene = tog::GenerateScene(flags.seed.value_or(0), spec);
  const auto paths = tog::WriteScene(scene, flags.out_dir);
  Emit(flags,
       {{"memory_index", paths.memory_index},
        {"query", paths.query},
        {"candidates", paths.candidates},
        {"ground_truth", paths.ground_truth}},
       "wrote scene to " + flags.out_dir + "\n");
  return kExitOk;
}

struct VerifyThresholds {
  bool strict = true;
  double rotation_rad = 1e-6;
};

bool Passes(const tog::VerificationReport& r, const VerifyThresholds& t) {
  if (!r.rotation_error_rad || *r.rotation_error_rad >= t.rotation_rad) {
    return false;
  }
  if (!t.strict) return true;
  return r.p_b_px_error && *r.p_b_px_error < 1e-6 && r.direction_error_rad &&
         *r.direction_error_rad < 1e-6 && r.selected_correct &&
         *r.selected_correct;
}

int CmdVerify(const GlobalFlags& flags, const tog::SceneSpec& spec,
              std::uint64_t seed_begin, int count) {
  if (count <= 0) throw UsageError("verify needs a non-empty seed range");
  auto config = LoadConfig(flags);
  if (flags.seed) seed_begin = *flags.seed;
  VerifyThresholds thresholds;
  if (spec.noise_px > 0.0 || spec.outlier_fraction > 0.0) {
    thresholds.strict = false;
    thresholds.rotation_rad = 2.0 * std::numbers::pi / 180.0;
  }
  const fs::path work =
      flags.out_dir.empty() ? fs::temp_directory_path() / "tog_verify"
                            : fs::path(flags.out_dir);
  int passed = 0;
  json per_seed = json::array();
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = seed_begin + std::uint64_t(i);
    const std::string dir = (work / ("seed_" + std::to_string(seed))).string();
    json entry = {{"seed", seed}};
    bool pass = false;
    try {
      const auto scene = tog::GenerateScene(seed, spec);
      const auto paths = tog::WriteScene(scene, dir);
      const auto store = tog::LoadStore(paths.memory_index);
      const auto inputs = tog::ReadQueryInputs(paths.query);
      const auto candidates = tog::ReadCandidates(paths.candidates);
      const auto report = tog::RunGrasp(store, inputs, candidates, config);
      const auto v = tog::VerifyScene(scene, tog::ToPipelineOutput(report));
      pass = Passes(v, thresholds);
      entry["report"] = json::parse(tog::VerificationReportToJson(v));
    } catch (const tog::Error& e) {
      entry["error"] = e.what();
    }
    if (flags.out_dir.empty()) fs::remove_all(dir);
    entry["pass"] = pass;
    passed += pass ? 1 : 0;
    per_seed.push_back(entry);
  }
  if (flags.out_dir.empty()) fs::remove_all(work);
  Emit(flags, {{"passed", passed}, {"total", count}, {"seeds", per_seed}},
       "verify: " + std::to_string(passed) + "/" + std::to_string(count) +
           " passed\n");
  return kExitOk;
}

void AddSpecOptions(CLI::App* cmd, tog::SceneSpec* spec) {
  cmd->add_option("--points", spec->n_points, "Object points per scene")
      ->check(CLI::Range(8, 100000));
  cmd->add_option("--noise", spec->noise_px, "Pixel noise sigma")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--outliers", spec->outlier_fraction, "Outlier fraction")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--pose-magnitude", spec->pose_magnitude,
                  "Maximum planted rotation angle, radians")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--feature-dim", spec->feature_dim, "Feature channels")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-oriented grasp transfer"};
  app.require_subcommand(1);
  GlobalFlags flags;
  app.add_option("--config", flags.config_path, "Pipeline config file");
  app.add_option("--seed", flags.seed, "Random seed");
  app.add_option("--out", flags.out_dir, "Output directory");
  app.add_flag("--json", flags.json, "Machine-readable stdout");

  std::string records_dir, index_path, memory, query, candidates, instance,
      retrieval, constraint;
  tog::SceneSpec spec;
  std::uint64_t seed_begin = 0;
  int seed_count = 100;

  auto* build = app.add_subcommand("build-memory", "Build the memory index");
  build->add_option("records_dir", records_dir)->required();
  build->add_option("--index", index_path, "Index file to write");

  auto* retrieve = app.add_subcommand("retrieve", "Retrieve a memory instance");
  retrieve->add_option("--query", query)->required();
  retrieve->add_option("--memory", memory, "Memory index");

  auto* transfer = app.add_subcommand("transfer", "Transfer the TOG constraint");
  transfer->add_option("--query", query)->required();
  transfer->add_option("--memory", memory, "Memory index");
  transfer->add_option("--instance", instance, "Memory instance id");
  transfer->add_option("--retrieval", retrieval, "retrieval.json to resume");

  auto* align = app.add_subcommand("align", "Select a grasp candidate");
  align->add_option("--constraint", constraint)->required();
  align->add_option("--candidates", candidates)->required();

  auto* grasp = app.add_subcommand("grasp", "Run the full pipeline");
  grasp->add_option("--query", query)->required();
  grasp->add_option("--candidates", candidates)->required();
  grasp->add_option("--memory", memory, "Memory index");

  auto* synth = app.add_subcommand("synth", "Write a synthetic scene");
  AddSpecOptions(synth, &spec);

  auto* verify = app.add_subcommand("verify", "Run synthetic verification");
  AddSpecOptions(verify, &spec);
  verify->add_option("--seed-begin", seed_begin, "First seed");
  verify->add_option("--count", seed_count, "Number of seeds");

  auto* version = app.add_subcommand("version", "Print the version");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*build) return CmdBuildMemory(flags, records_dir, index_path);
    if (*retrieve) return CmdRetrieve(flags, query, memory);
    if (*transfer) {
      return CmdTransfer(flags, query, memory, instance, retrieval);
    }
    if (*align) return CmdAlign(flags, constraint, candidates);
    if (*grasp) return CmdGrasp(flags, query, candidates, memory);
    if (*synth) return CmdSynth(flags, spec);
    if (*verify) return CmdVerify(flags, spec, seed_begin, seed_count);
    if (*version) {
      std::cout << "tog " << TOG_VERSION << "\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const tog::StageError& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kExitStage;
  } catch (const tog::Error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitUsage;
}
