#pragma once

// Agent output grammar: think / tool_call / answer / code / observation tags,
// tool-call argument schemas, and observation rendering. The tag and tool-name
// constants here are the single source of truth for every other module.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mmagent/util.hpp"

namespace mmagent::protocol {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kToolCallOpen = "<tool_call>";
inline constexpr std::string_view kToolCallClose = "</tool_call>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kCodeOpen = "<code>";
inline constexpr std::string_view kCodeClose = "</code>";
inline constexpr std::string_view kObservationOpen = "<observation>";
inline constexpr std::string_view kObservationClose = "</observation>";

/// Body of an observation that carries no entries.
inline constexpr std::string_view kNoResultsSentinel = "No results found.";

enum class ToolName { ImageSearch, TextSearch, WebVisit, Code };

inline constexpr ToolName kAllTools[] = {ToolName::ImageSearch, ToolName::TextSearch,
                                         ToolName::WebVisit, ToolName::Code};

std::string_view tool_name_str(ToolName t);
std::optional<ToolName> tool_from_str(std::string_view s);
/// Argument key each tool requires: image_paths, queries, urls, code.
std::string_view tool_arg_key(ToolName t);

struct ToolCall {
  ToolName name = ToolName::TextSearch;
  std::vector<std::string> values;  // image_paths / queries / urls
  std::string code;                 // code tool only

  bool operator==(const ToolCall&) const = default;
};

struct FinalAnswer {
  std::string text;
  bool operator==(const FinalAnswer&) const = default;
};

enum class MalformedReason {
  MissingThink,
  MultipleActions,
  BadJson,
  UnknownTool,
  BadArgKeys,
  MissingAction,
};

std::string_view malformed_reason_str(MalformedReason r);
std::optional<MalformedReason> malformed_reason_from_str(std::string_view s);

struct Malformed {
  MalformedReason reason = MalformedReason::MissingAction;
  std::string detail;
  bool operator==(const Malformed& o) const { return reason == o.reason; }
};

using Action = std::variant<ToolCall, FinalAnswer, Malformed>;

struct TurnSegments {
  std::string think;
  Action action;
  std::string raw;

  bool is_malformed() const { return std::holds_alternative<Malformed>(action); }
  const ToolCall* tool_call() const { return std::get_if<ToolCall>(&action); }
  const FinalAnswer* answer() const { return std::get_if<FinalAnswer>(&action); }

  /// Compares think and action; `raw` is provenance only.
  bool operator==(const TurnSegments& o) const { return think == o.think && action == o.action; }
};

/// Parses one complete model turn. Total: never throws, malformation is a value.
TurnSegments parse_turn(std::string_view text);

/// Renders a well-formed turn back to the canonical tag grammar. Throws
/// std::invalid_argument for Malformed input.
std::string serialize_turn(const TurnSegments& seg);

/// Canonical tool-call payload, e.g.
/// {"name": "image_search", "arguments": {"image_paths": ["p1.png"]}}
std::string tool_call_json(const ToolCall& call);

/// Checks the ToolCall invariants (non-empty list / code). Returns a reason on
/// violation.
std::optional<std::string> validate_tool_call(const ToolCall& call);

// ---- streaming stop detection --------------------------------------------

struct StopDecision {
  enum class Kind { AwaitMore, StopAtToolCall, StopAtAnswer };
  Kind kind = Kind::AwaitMore;
  std::size_t offset = 0;  // one past the closing tag

  bool operator==(const StopDecision&) const = default;
};

/// Decides whether generation should halt: at the first complete closing
/// action tag after the think-span. `</code>` counts as a tool call.
StopDecision detect_stop(std::string_view buffer);

// ---- observations -----------------------------------------------------------

struct SearchEntry {
  std::string title;
  std::string link;
  std::string snippet;    // rendered as "text:"
  std::string image;      // rendered as "image:"
  std::string group;      // query / image the entry answers
  bool operator==(const SearchEntry&) const = default;
};

struct PageEntry {
  std::string url;
  std::string content;
  bool was_summarized = false;
  bool was_truncated = false;
  std::size_t raw_length = 0;
  bool operator==(const PageEntry&) const = default;
};

struct CodeEntry {
  std::string stdout_text;
  std::string stderr_text;
  int exit_status = 0;
  std::vector<std::string> produced_images;  // workspace-relative
  int first_image_number = 1;                // numbering of <sub-image k>
  double wall_time_s = 0.0;
  bool timed_out = false;
  bool operator==(const CodeEntry&) const = default;
};

struct ErrorEntry {
  std::string message;
  std::string group;
  bool operator==(const ErrorEntry&) const = default;
};

using ObservationEntry = std::variant<SearchEntry, PageEntry, CodeEntry, ErrorEntry>;

struct Observation {
  std::vector<ObservationEntry> entries;

  bool operator==(const Observation&) const = default;
  bool has_error() const;
  const CodeEntry* code() const;
};

/// Deterministic model-visible rendering wrapped in observation tags.
std::string render_observation(const Observation& obs);

// ---- JSON storage -----------------------------------------------------------

json to_json(const ToolCall& call);
ToolCall tool_call_from_json(const json& j);
json to_json(const TurnSegments& seg);
TurnSegments turn_from_json(const json& j);
json to_json(const Observation& obs);
Observation observation_from_json(const json& j);

}  // namespace mmagent::protocol
