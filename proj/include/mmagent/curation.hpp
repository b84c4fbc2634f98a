#pragma once

// Trajectory filtering (format, answer, final consistency, step-wise image
// consistency, low quality), function classification and SFT export.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmagent/code_ops.hpp"
#include "mmagent/llm.hpp"
#include "mmagent/orchestrator.hpp"

namespace mmagent::curation {

using orchestrator::Trajectory;

enum class Stage { Format, Answer, FinalConsistency, Stepwise, LowQuality };
enum class Status { Pass, Fail, Pending };

inline constexpr Stage kStages[] = {Stage::Format, Stage::Answer, Stage::FinalConsistency, Stage::Stepwise,
                                    Stage::LowQuality};

std::string_view stage_str(Stage s);
Stage stage_from_str(std::string_view s);
std::string_view status_str(Status s);
Status status_from_str(std::string_view s);

struct FilterVerdict {
  Stage stage = Stage::Format;
  Status status = Status::Pending;
  std::string reason;  // non-empty unless Pass
  std::optional<std::string> judge_raw;
  std::vector<int> steps;  // offending history indices (step-wise stage)
  std::string pipeline_version;

  bool pass() const { return status == Status::Pass; }
};

json to_json(const FilterVerdict& v);
FilterVerdict verdict_from_json(const json& j);

FilterVerdict format_filter(const Trajectory& t);
FilterVerdict answer_filter(const Trajectory& t, const std::optional<std::string>& gold, llm::ChatEndpoint* judge);
FilterVerdict final_consistency_check(const Trajectory& t, llm::ChatEndpoint* judge);
/// Each produced image is checked against the think of the turn that follows
/// it. Image paths are resolved under `workspace_root`.
FilterVerdict stepwise_consistency_check(const Trajectory& t, llm::ChatEndpoint* vlm_judge,
                                         const std::filesystem::path& workspace_root);

// ---- classification --------------------------------------------------------------

enum class FunctionTag { ErrorOps, SingleRound, ReCrop, ZoomIn, Navigation, ContrastOrOther };

std::string_view function_tag_str(FunctionTag t);

struct FunctionTags {
  std::set<FunctionTag> tags;
  std::map<std::string, int> tool_counts;
  std::map<code_ops::OpKind, int> op_counts;

  bool has(FunctionTag t) const { return tags.count(t) > 0; }
};

/// Rule-based tags from the parsed code turns.
FunctionTags classify_functions(const Trajectory& t);

/// Correction wording that marks a re-crop in the think after a crop.
bool mentions_correction(std::string_view think);

FilterVerdict low_quality_check(const FunctionTags& tags);

/// Indices of the entries without error_ops or re_crop.
std::vector<std::size_t> remove_low_quality(const std::vector<FunctionTags>& tags);

// ---- pipeline ----------------------------------------------------------------------

struct PipelineConfig {
  llm::ChatEndpoint* judge = nullptr;
  llm::ChatEndpoint* vlm_judge = nullptr;
  std::filesystem::path workspace_root = "workspace";
};

struct CurationResult {
  std::string key;  // "<task id>#<rollout>"
  std::vector<FilterVerdict> verdicts;
  FunctionTags tags;

  bool passed_all() const;
  /// First non-pass verdict, if any.
  const FilterVerdict* blocking() const;
};

std::string trajectory_key(const Trajectory& t);

/// Prior verdicts per trajectory key, as loaded from a verdict store.
using PriorVerdicts = std::map<std::string, std::vector<FilterVerdict>>;

/// Runs the stages in order and stops at the first non-pass. Prior Pass/Fail
/// verdicts from the same pipeline version are reused; Pending ones are re-run.
CurationResult curate_one(const Trajectory& t, const PipelineConfig& cfg, const std::vector<FilterVerdict>* prior);

/// Parallel across trajectories (OpenMP); results keep input order.
std::vector<CurationResult> run_pipeline(const std::vector<Trajectory>& trajs, const PipelineConfig& cfg,
                                         const PriorVerdicts* prior = nullptr);
std::vector<CurationResult> run_pipeline_serial(const std::vector<Trajectory>& trajs, const PipelineConfig& cfg,
                                                const PriorVerdicts* prior = nullptr);

/// Verdict store sidecar: one JSON line per verdict with the trajectory key.
PriorVerdicts load_verdicts(const std::filesystem::path& path);
void append_verdicts(const std::filesystem::path& path, const std::vector<CurationResult>& results);

/// Figure-style distribution of operation kinds: "op,count" rows.
std::string distribution_csv(const std::vector<FunctionTags>& tags);

// ---- SFT export ----------------------------------------------------------------------

enum class MixTag { ThinkImage, Search, Interleaved, Planner, GeneralVqa };

std::string_view mix_tag_str(MixTag t);

MixTag mix_tag_for(const Trajectory& t);

struct PlanSample {
  orchestrator::Task task;
  std::string plan_json;  // canonical plan
};

struct SftRecord {
  std::string system;
  json messages;                    // [{role, content, images?}]
  std::vector<std::string> images;  // package-relative
  json meta;
  MixTag tag = MixTag::GeneralVqa;
};

json to_json(const SftRecord& r);

struct ExportStats {
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::size_t duplicates = 0;
  std::map<MixTag, std::size_t> per_tag;
};

/// Writes JSONL SFT records to `out_path` and copies every referenced image
/// under `images_dir` (paths in records are relative to it). Records with an
/// unpackageable image are skipped and logged. Order is a seeded shuffle.
ExportStats export_sft(const std::vector<Trajectory>& trajs, const std::vector<PlanSample>& plans,
                       const std::filesystem::path& workspace_root, const std::filesystem::path& out_path,
                       const std::filesystem::path& images_dir, std::uint64_t seed);

}  // namespace mmagent::curation
