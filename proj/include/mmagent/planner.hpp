#pragma once

// Structured plans: parsing, placeholder dependencies, validation and
// conversion of executed trajectories into plan supervision.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmagent/curation.hpp"
#include "mmagent/orchestrator.hpp"
#include "mmagent/util.hpp"

namespace mmagent::planner {

enum class PlanTool { ImageSearch, TextSearch, WebVisit, None };

std::string_view plan_tool_str(PlanTool t);
std::optional<PlanTool> plan_tool_from_str(std::string_view s);  // exact match only
/// Required parameter key, empty for None.
std::string_view plan_tool_param(PlanTool t);

struct PlanStep {
  int index = 0;  // 1-based
  std::string description;
  PlanTool tool = PlanTool::None;
  json parameters = json::object();

  bool operator==(const PlanStep&) const = default;
};

struct Plan {
  std::vector<PlanStep> steps;
  bool operator==(const Plan&) const = default;
};

enum class PlanErrorKind {
  NotJsonArray,
  BadStepShape,
  UnknownTool,
  ExtraProse,
  MalformedPlaceholder,
  ForwardReference,
  MissingFinalReasoningStep,
  StepCountOutOfRange,
  ToolParamMismatch,
  UnmappableTurn,
};

std::string_view plan_error_str(PlanErrorKind k);

class PlanError : public DataError {
 public:
  PlanError(PlanErrorKind kind, int step, const std::string& what)
      : DataError(what), kind_(kind), step_(step) {}
  PlanErrorKind kind() const { return kind_; }
  int step() const { return step_; }  // 1-based, 0 when not step-specific

 private:
  PlanErrorKind kind_;
  int step_;
};

/// Strict: one JSON array of {description, tool_name, parameters} objects and
/// nothing else but whitespace.
Plan parse_plan(std::string_view text);

/// Canonical compact JSON; parse_plan(serialize_plan(p)) == p.
std::string serialize_plan(const Plan& p);

struct Placeholder {
  std::string raw;  // "[Person identified in Step 1]"
  int referenced_step = 0;
  int host_step = 0;
  std::string host_field;  // "description" or "parameters.<key>"
  std::size_t offset = 0;  // byte offset inside the host string
};

/// Every bracketed "... Step N ..." reference in descriptions and string
/// parameter values, in step then field then offset order.
std::vector<Placeholder> extract_placeholders(const Plan& plan);

struct DependencyGraph {
  std::vector<std::pair<int, int>> edges;  // (j, i): step j consumes step i
  std::vector<int> order;
};

struct ValidateOptions {
  bool strict_step_bound = true;  // 2..10 steps; loose mode only needs one step
};

DependencyGraph validate_plan(const Plan& plan, const ValidateOptions& opt = {});

struct ConvertOptions {
  bool strict = false;              // code turns throw UnmappableTurn instead of becoming none-steps
  std::size_t min_match_chars = 12;  // provenance threshold for placeholder insertion
};

/// Longest case-insensitive common substring of `value` and `source`, trimmed
/// to word boundaries. Returns {offset in value, length}; length 0 when none.
std::pair<std::size_t, std::size_t> longest_common_span(std::string_view value, std::string_view source);

/// One step per executed tool value, placeholders for values that came from
/// earlier observations, and a closing none-step. The result always passes
/// validate_plan; otherwise this throws.
Plan trajectory_to_plan(const orchestrator::Trajectory& t, const ConvertOptions& opt = {});

curation::PlanSample make_plan_sample(const orchestrator::Trajectory& t, const ConvertOptions& opt = {});

/// Plan supervision JSONL rows {id, question, images, plan_canonical_json}.
void write_plan_samples(const std::filesystem::path& path, const std::vector<curation::PlanSample>& samples);
std::vector<curation::PlanSample> read_plan_samples(const std::filesystem::path& path);

}  // namespace mmagent::planner
