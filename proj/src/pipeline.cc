#include "tog/pipeline.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "binary_io.h"

namespace tog {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

Error ConfigError(int line, const std::string& message) {
  return Error(ErrorCode::kInvalidArgument,
               "config line " + std::to_string(line) + ": " + message);
}

double ParseDouble(const std::string& value, int line) {
  double out = 0.0;
  const auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(line, "expected a number, got '" + value + "'");
  }
  return out;
}

template <typename Int>
Int ParseInteger(const std::string& value, int line) {
  Int out = 0;
  const auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(line, "expected an integer, got '" + value + "'");
  }
  return out;
}

bool ParseBool(const std::string& value, int line) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError(line, "expected true or false, got '" + value + "'");
}

std::string ParseString(const std::string& value, int line) {
  if (value.size() < 2 || value.front() != '"' || value.back() != '"') {
    throw ConfigError(line, "expected a quoted string, got '" + value + "'");
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < value.size(); ++i) {
    if (value[i] == '\\' && i + 2 < value.size()) {
      ++i;
    }
    out.push_back(value[i]);
  }
  return out;
}

std::string Quote(const std::string& s) {
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

std::string FormatDouble(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

// Strips a trailing comment that is not inside a quoted string.
std::string StripComment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

template <typename F>
double TimeMs(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

std::string RelativeTo(const std::string& path, const std::string& base_dir) {
  const fs::path base = base_dir.empty() ? fs::path(".") : fs::path(base_dir);
  return fs::relative(fs::absolute(path), fs::absolute(base)).generic_string();
}

}  // namespace

PipelineConfig ParseConfig(const std::string& text) {
  PipelineConfig c;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = Trim(StripComment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "malformed section");
      section = Trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "retrieval" && section != "transfer" &&
          section != "scoring") {
        throw ConfigError(line_no, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, "expected key = value");
    const std::string key = Trim(std::string_view(line).substr(0, eq));
    const std::string value = Trim(std::string_view(line).substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;

    auto& r = c.retrieval;
    auto& t = c.transfer;
    auto& s = c.scoring;
    if (full == "memory_index_path") {
      c.memory_index_path = ParseString(value, line_no);
    } else if (full == "output_dir") {
      c.output_dir = ParseString(value, line_no);
    } else if (full == "retrieval.alpha") {
      r.alpha = ParseDouble(value, line_no);
    } else if (full == "retrieval.coarse_m") {
      r.coarse_m = ParseInteger<int>(value, line_no);
    } else if (full == "retrieval.top_k") {
      r.top_k = ParseInteger<int>(value, line_no);
    } else if (full == "retrieval.reranker_cmd") {
      c.reranker_cmd = ParseString(value, line_no);
    } else if (full == "retrieval.imd_enabled") {
      r.imd_enabled = ParseBool(value, line_no);
    } else if (full == "transfer.ransac_threshold_px") {
      t.pnp.ransac_threshold_px = ParseDouble(value, line_no);
    } else if (full == "transfer.ransac_iters") {
      t.pnp.ransac_max_iterations = ParseInteger<int>(value, line_no);
    } else if (full == "transfer.ransac_seed") {
      t.pnp.ransac_seed = ParseInteger<std::uint64_t>(value, line_no);
    } else if (full == "transfer.ransac_confidence") {
      t.pnp.ransac_confidence = ParseDouble(value, line_no);
    } else if (full == "transfer.ransac_min_inlier_ratio") {
      t.pnp.ransac_min_inlier_ratio = ParseDouble(value, line_no);
    } else if (full == "transfer.match_confidence_min") {
      t.match_confidence_min = ParseDouble(value, line_no);
    } else if (full == "transfer.softargmax_temperature") {
      t.softargmax_temperature = ParseDouble(value, line_no);
    } else if (full == "transfer.depth_window") {
      t.depth_window = ParseInteger<int>(value, line_no);
    } else if (full == "scoring.sigma") {
      s.sigma = ParseDouble(value, line_no);
    } else if (full == "scoring.w_task") {
      s.w_task = ParseDouble(value, line_no);
    } else if (full == "scoring.w_geo") {
      s.w_geo = ParseDouble(value, line_no);
    } else {
      throw ConfigError(line_no, "unknown key '" + full + "'");
    }
  }
  ValidateConfig(c);
  return c;
}

PipelineConfig ReadConfig(const std::string& path) {
  return ParseConfig(internal::ReadTextFile(path));
}

std::string FormatConfig(const PipelineConfig& c) {
  std::ostringstream out;
  const auto& r = c.retrieval;
  const auto& t = c.transfer;
  const auto& s = c.scoring;
  out << "memory_index_path = " << Quote(c.memory_index_path) << "\n"
      << "output_dir = " << Quote(c.output_dir) << "\n"
      << "\n[retrieval]\n"
      << "alpha = " << FormatDouble(r.alpha) << "\n"
      << "coarse_m = " << r.coarse_m << "\n"
      << "top_k = " << r.top_k << "\n"
      << "reranker_cmd = " << Quote(c.reranker_cmd) << "\n"
      << "imd_enabled = " << (r.imd_enabled ? "true" : "false") << "\n"
      << "\n[transfer]\n"
      << "ransac_threshold_px = " << FormatDouble(t.pnp.ransac_threshold_px)
      << "\n"
      << "ransac_iters = " << t.pnp.ransac_max_iterations << "\n"
      << "ransac_seed = " << t.pnp.ransac_seed << "\n"
      << "ransac_confidence = " << FormatDouble(t.pnp.ransac_confidence) << "\n"
      << "ransac_min_inlier_ratio = "
      << FormatDouble(t.pnp.ransac_min_inlier_ratio) << "\n"
      << "match_confidence_min = " << FormatDouble(t.match_confidence_min)
      << "\n"
      << "softargmax_temperature = " << FormatDouble(t.softargmax_temperature)
      << "\n"
      << "depth_window = " << t.depth_window << "\n"
      << "\n[scoring]\n"
      << "sigma = " << FormatDouble(s.sigma) << "\n"
      << "w_task = " << FormatDouble(s.w_task) << "\n"
      << "w_geo = " << FormatDouble(s.w_geo) << "\n";
  return out.str();
}

void ValidateConfig(const PipelineConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string("config value out of range: ") + what);
    }
  };
  const auto& r = c.retrieval;
  const auto& t = c.transfer;
  require(r.alpha >= 0.0 && r.alpha <= 1.0, "retrieval.alpha");
  require(r.coarse_m >= 1, "retrieval.coarse_m");
  require(r.top_k >= 1, "retrieval.top_k");
  require(t.pnp.ransac_threshold_px > 0.0, "transfer.ransac_threshold_px");
  require(t.pnp.ransac_max_iterations >= 1, "transfer.ransac_iters");
  require(t.pnp.ransac_confidence > 0.0 && t.pnp.ransac_confidence < 1.0,
          "transfer.ransac_confidence");
  require(t.pnp.ransac_min_inlier_ratio >= 0.0 &&
              t.pnp.ransac_min_inlier_ratio <= 1.0,
          "transfer.ransac_min_inlier_ratio");
  require(t.match_confidence_min >= -1.0 && t.match_confidence_min <= 1.0,
          "transfer.match_confidence_min");
  require(t.softargmax_temperature > 0.0, "transfer.softargmax_temperature");
  require(t.depth_window >= 1 && t.depth_window % 2 == 1,
          "transfer.depth_window");
  require(c.scoring.IsValid(), "scoring (sigma > 0, w_task + w_geo = 1)");
}

QueryInputs ReadQueryInputs(const std::string& path) {
  const std::string dir = internal::ParentDir(path);
  json j;
  try {
    j = json::parse(internal::ReadTextFile(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                "query " + path + ": " + e.what());
  }
  auto ref = [&](const char* key) {
    try {
      return internal::ResolvePath(dir, j.at(key).get<std::string>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument,
                  "query " + path + ": " + e.what());
    }
  };
  QueryInputs in;
  in.query.task_text = j.value("task_text", "");
  in.query.target_image_ref = j.value("target_image_ref", "");
  in.query.image_embedding = ReadEmbedding(ref("image_embedding_ref"));
  in.query.text_embedding = ReadEmbedding(ref("text_embedding_ref"));
  in.intrinsics = ReadIntrinsics(ref("intrinsics_ref"));
  in.depth = ReadDepthMap(ref("depth_ref"));
  in.query.target_feature_map = ReadFeatureMap(ref("target_feature_map_ref"));
  in.query.target_feature_map.SetImageSize(in.intrinsics.width,
                                           in.intrinsics.height);
  if (in.depth.width != in.intrinsics.width ||
      in.depth.height != in.intrinsics.height) {
    throw Error(ErrorCode::kDimensionMismatch,
                "depth map size does not match the target intrinsics");
  }
  return in;
}

std::string RunReportToJson(const RunReport& report) {
  json timings = json::object();
  for (const auto& [stage, ms] : report.timings_ms) timings[stage] = ms;
  json imd = json::array();
  for (const auto& c : report.imd_table) {
    imd.push_back({{"id", c.instance_id},
                   {"semantic_score", c.semantic_score},
                   {"imd", c.imd ? json(*c.imd) : json(nullptr)}});
  }
  json j = {{"schema_version", kReportSchemaVersion},
            {"effective_config", report.effective_config},
            {"timings_ms", timings},
            {"retrieved_instance_id", report.retrieved_instance_id},
            {"imd_table", imd},
            {"warnings", report.warnings}};
  if (report.transfer) {
    j["transfer"] = json::parse(ConstraintToJson(*report.transfer));
    j["transfer"]["num_matches"] = report.transfer->num_matches;
    j["transfer"]["num_lifted"] = report.transfer->num_lifted;
    j["transfer"]["point_confidence"] = report.transfer->point_confidence;
  }
  if (report.selection) {
    j["selection"] = json::parse(SelectionToJson(*report.selection));
  }
  return j.dump(2) + "\n";
}

RunReport RunGrasp(const MemoryStore& store, const QueryInputs& inputs,
                   const std::vector<GraspCandidated>& candidates,
                   const PipelineConfig& config) {
  RunReport report;
  report.effective_config = FormatConfig(config);

  std::map<std::string, FeatureMap> cache;
  const FeatureMapLoader load = [&](const MemoryInstance& inst) {
    auto it = cache.find(inst.id);
    if (it == cache.end()) {
      it = cache.emplace(inst.id, LoadInstanceFeatureMap(store, inst)).first;
    }
    return it->second;
  };

  RetrievalResult retrieval;
  report.timings_ms["retrieval"] = TimeMs([&] {
    try {
      std::unique_ptr<ReRanker> reranker;
      if (config.reranker_cmd.empty()) {
        reranker = std::make_unique<IdentityReRanker>();
      } else {
        reranker = std::make_unique<SubprocessReRanker>(config.reranker_cmd);
      }
      retrieval =
          Retrieve(inputs.query, store, config.retrieval, *reranker, load);
    } catch (const Error& e) {
      throw StageError("retrieval", e);
    }
  });
  report.retrieved_instance_id = retrieval.selected.instance_id;
  report.imd_table = retrieval.reranked;
  report.warnings = retrieval.warnings;

  report.timings_ms["transfer"] = TimeMs([&] {
    try {
      const MemoryInstance* inst = store.Find(report.retrieved_instance_id);
      if (inst == nullptr) {
        throw Error(ErrorCode::kInvalidArgument, "retrieved id not in store");
      }
      report.transfer = TransferConstraints(
          *inst, load(*inst), inputs.query.target_feature_map, inputs.depth,
          inputs.intrinsics, config.transfer);
    } catch (const Error& e) {
      throw StageError("transfer", e);
    }
  });

  report.timings_ms["alignment"] = TimeMs([&] {
    try {
      const auto& c = report.transfer->constraint;
      report.selection =
          SelectGrasp(candidates, c.position, c.direction, config.scoring);
    } catch (const Error& e) {
      throw StageError("alignment", e);
    }
  });
  return report;
}

BuildMemorySummary BuildMemory(const std::string& records_dir,
                               const std::string& index_path) {
  std::error_code ec;
  if (!fs::is_directory(records_dir, ec)) {
    throw Error(ErrorCode::kIoError, "not a directory: " + records_dir);
  }
  std::vector<fs::path> records;
  for (const auto& entry : fs::directory_iterator(records_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      records.push_back(entry.path());
    }
  }
  std::sort(records.begin(), records.end());

  const std::string index_dir = internal::ParentDir(index_path);
  BuildMemorySummary summary;
  MemoryStore store;
  for (const auto& record_path : records) {
    const std::string stem = record_path.stem().string();
    const std::string dir = record_path.parent_path().string();
    auto sibling = [&](const std::string& suffix) {
      return (record_path.parent_path() / (stem + suffix)).string();
    };
    try {
      const DemonstrationRecord record =
          ReadDemonstrationRecord(record_path.string());
      InstanceArtifacts artifacts;
      artifacts.image_embedding = ReadEmbedding(sibling(".image.rtae"));
      artifacts.text_embedding = ReadEmbedding(sibling(".text.rtae"));
      artifacts.image_embedding_ref =
          RelativeTo(sibling(".image.rtae"), index_dir);
      artifacts.text_embedding_ref = RelativeTo(sibling(".text.rtae"), index_dir);
      const std::string fm_path = sibling(".rtaf");
      ReadFeatureMap(fm_path);
      artifacts.feature_map_ref = RelativeTo(fm_path, index_dir);

      MemoryInstance original = BuildInstance(record, stem, std::move(artifacts));
      original.intrinsics_ref = RelativeTo(
          internal::ResolvePath(dir, record.intrinsics_ref), index_dir);

      std::vector<MemoryInstance> flipped;
      for (MemoryInstance flip : AugmentFlips(original)) {
        const std::string tag(AugmentationName(flip.augmentation));
        const std::string flip_fm = sibling("." + tag + ".rtaf");
        if (!fs::exists(flip_fm)) {
          summary.warnings.push_back(stem + ": missing " + tag +
                                     " feature map, flip skipped");
          continue;
        }
        ReadFeatureMap(flip_fm);
        flip.feature_map_ref = RelativeTo(flip_fm, index_dir);
        for (const auto& [suffix, ref, emb] :
             {std::tuple{".image.rtae", &flip.image_embedding_ref,
                         &flip.image_embedding},
              std::tuple{".text.rtae", &flip.text_embedding_ref,
                         &flip.text_embedding}}) {
          const std::string path = sibling("." + tag + suffix);
          if (fs::exists(path)) {
            *emb = ReadEmbedding(path);
            *ref = RelativeTo(path, index_dir);
          }
        }
        flipped.push_back(std::move(flip));
      }
      store.Add(std::move(original));
      for (auto& f : flipped) store.Add(std::move(f));
      ++summary.valid_records;
    } catch (const Error& e) {
      summary.warnings.push_back(record_path.filename().string() + ": " +
                                 e.what());
    }
  }
  if (summary.valid_records == 0) {
    throw Error(ErrorCode::kEmptyInput,
                "no valid demonstration records in " + records_dir);
  }
  summary.instances = static_cast<int>(store.instances.size());
  SaveStore(store, index_path);
  return summary;
}

PipelineOutput ToPipelineOutput(const RunReport& report) {
  PipelineOutput out;
  if (report.transfer) {
    out.pose = report.transfer->pnp.transform;
    out.p_b_px = report.transfer->constraint.position_px;
    out.p_b = report.transfer->constraint.position;
    out.v_b = report.transfer->constraint.direction;
  }
  if (report.selection) out.selected_index = report.selection->index;
  return out;
}

}  // namespace tog
