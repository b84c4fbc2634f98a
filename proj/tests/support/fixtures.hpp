#pragma once

// Shared test data: dialogue traces, a reference plan, a toy link graph,
// a defect-injected curation corpus and the scripted desk-run setup.

#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mmagent/orchestrator.hpp"
#include "mmagent/planner.hpp"
#include "mmagent/protocol.hpp"
#include "mmagent/querygen.hpp"

namespace mmagent::fixtures {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir.
fs::path temp_dir(const std::string& tag);

// ---- dialogue traces -------------------------------------------------------------

struct TraceTurn {
  protocol::TurnSegments seg;
  std::optional<std::string> observation;  // body between the observation tags
};

/// Model turns and the observations that follow them.
std::vector<TraceTurn> split_trace(std::string_view dialogue);

/// Three successive crops, then an answer.
std::string crop_navigation_trace();
/// Reverse image search, text search, answer.
std::string geolocation_search_trace();
/// Crop, reverse image search on the crop, text search, answer.
std::string interleaved_trace();

/// A scripted model, search fixtures and sandbox that reproduce a trace when the
/// episode runs on a single image named image_1.png.
struct TraceRig {
  orchestrator::Task task;
  orchestrator::EpisodeConfig episode;
  std::vector<TraceTurn> turns;
  llm::EndpointPtr model;
  std::shared_ptr<toolbox::ToolRegistry> registry;
};

TraceRig trace_rig(std::string_view trace, const fs::path& dir,
                   std::shared_ptr<toolbox::TranscriptCache> transcript = nullptr);

/// Five-step plan: image_search, text_search, text_search, web_visit, none.
std::string reference_plan_json();

/// Random valid plan (2..10 steps, backward references only) as a JSON array.
/// `edges` receives the (consumer, producer) pairs that were inserted.
json random_valid_plan(std::mt19937_64& rng, std::set<std::pair<int, int>>& edges);

struct PlanMutation {
  std::string text;
  planner::PlanErrorKind expected;
  std::string label;
};

/// One seeded defect applied to a valid plan: forward reference, unknown tool,
/// missing closing none-step, too many steps, stray prose, wrong parameter key
/// or an unclosed placeholder.
PlanMutation mutate_plan(const json& plan, std::mt19937_64& rng);

// ---- toy encyclopedia --------------------------------------------------------------

/// Distinct seven-letter names; none contains another.
std::vector<std::string> toy_names(std::size_t n);
/// `n` linked pages with a founding year in every lead, plus two redirects.
std::vector<querygen::RawPage> toy_pages(std::size_t n = 50, std::uint64_t seed = 7);

// ---- curation corpus ------------------------------------------------------------------

struct InjectedDefects {
  std::set<std::string> format;
  std::set<std::string> answer;
  std::set<std::string> blank_crop;
  std::set<std::string> sandbox_error;
  std::set<std::string> clean;
};

/// `n` trajectories (crop, optional retry, answer) with disjoint defect sets of
/// 5% format, 10% answer, 5% blank-crop and 10% sandbox-error. Produced images
/// are written under `workspace_root`.
std::vector<orchestrator::Trajectory> curation_corpus(std::size_t n, std::uint64_t seed,
                                                      const fs::path& workspace_root, InjectedDefects& defects);

/// Judge: DISAGREE for answers containing "wrong", AGREE otherwise; CONSISTENT
/// for consistency prompts.
llm::EndpointPtr corpus_judge();
/// VLM judge: CONTRADICTED for images whose name starts with "blank".
llm::EndpointPtr corpus_vlm_judge();

// ---- desk run ------------------------------------------------------------------------

struct DeskFixture {
  fs::path dir;
  fs::path config;  // JSON config with scripted endpoints, fixtures, transcript recording
  fs::path tasks;   // tasks.jsonl
  std::vector<orchestrator::Task> task_list;
  std::string four_turn_task;  // image_search, text_search, web_visit, answer
};

/// 20 tasks: think-with-image, search, interleaved and direct ones, with every
/// model, judge, sandbox, search and web response scripted.
DeskFixture write_desk_fixture(const fs::path& dir);

}  // namespace mmagent::fixtures
