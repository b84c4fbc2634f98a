#pragma once

// Run configuration: one JSON file, secrets only by env var name, relative
// paths resolved against the file's directory.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmagent/llm.hpp"
#include "mmagent/orchestrator.hpp"
#include "mmagent/querygen.hpp"
#include "mmagent/toolbox.hpp"
#include "mmagent/transcript.hpp"

namespace mmagent::config {

enum class EndpointKind { Http, Scripted, Offline };

struct EndpointSpec {
  EndpointKind kind = EndpointKind::Http;
  llm::HttpEndpointConfig http;
  std::filesystem::path script;
  int min_interval_ms = 0;
};

struct SearchSpec {
  std::string kind = "serper";  // serper | fixture
  toolbox::SearchProviderConfig serper;
  std::filesystem::path fixture;
};

struct WebSpec {
  std::string kind = "http";  // http | fixture
  std::filesystem::path fixture;
  double timeout_s = 20.0;
  std::size_t summarize_threshold = 4000;
};

struct SandboxSpec {
  std::string kind = "http";  // http | scripted
  std::string address = "http://127.0.0.1:8080";
  std::filesystem::path script;
  toolbox::SandboxSettings settings;
};

struct Config {
  std::filesystem::path source;  // config file, empty when built in code
  std::filesystem::path workspace_root = "workspace";
  std::uint64_t seed = 0;
  std::map<std::string, EndpointSpec> endpoints;  // model, judge, vlm_judge, summarizer, qa, ...
  SearchSpec search;
  WebSpec web;
  SandboxSpec sandbox;
  std::filesystem::path transcript_path;
  toolbox::TranscriptMode transcript_mode = toolbox::TranscriptMode::Off;
  orchestrator::EpisodeConfig episode;
  int rollouts = 1;
  querygen::WalkConfig walk;
  querygen::GraphOptions graph;
  json raw;  // effective JSON after overrides
};

/// Roles the walk generator uses; each falls back to "qa".
inline const std::vector<std::string> kWalkRoles = {"qa", "evaluator", "extractor", "rewriter", "checker"};

/// Parses and type-checks. Errors name the field path, e.g.
/// "episode.max_turns: expected integer".
Config parse_config(const json& j, const std::filesystem::path& base_dir = {});
Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when it is
/// valid JSON, else taken as a string.
void apply_override(json& j, const std::string& assignment);

enum class Need { Model, Judge, VlmJudge, Summarizer, Tools, WalkModels };

/// Checks everything the given needs touch: env vars set, files present,
/// workspace writable. Throws ConfigError with the field path. Makes no
/// network calls.
void validate(const Config& cfg, const std::vector<Need>& needs);

/// JSON with any non-env secret-looking value masked.
json redacted(const json& raw);

llm::EndpointPtr make_endpoint(const Config& cfg, const std::string& role);
/// nullptr when the role is not configured.
llm::EndpointPtr make_optional_endpoint(const Config& cfg, const std::string& role);
/// Walk role with the "qa" fallback.
llm::EndpointPtr make_walk_endpoint(const Config& cfg, const std::string& role);

std::shared_ptr<toolbox::TranscriptCache> make_transcript(const Config& cfg, toolbox::TranscriptMode mode);
/// Registry with the configured providers; `offline_only` swaps in empty
/// fixtures so a replay never touches the network.
std::unique_ptr<toolbox::ToolRegistry> make_registry(const Config& cfg, std::shared_ptr<toolbox::TranscriptCache> tc,
                                                     bool offline_only = false);

}  // namespace mmagent::config
