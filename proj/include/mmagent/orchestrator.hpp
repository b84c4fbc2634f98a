#pragma once

// ReAct episode loop, rollout sets and batch generation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmagent/judge.hpp"
#include "mmagent/llm.hpp"
#include "mmagent/protocol.hpp"
#include "mmagent/toolbox.hpp"

namespace mmagent::orchestrator {

enum class Mode { General, DeepResearch, Plan, Direct };

std::string_view mode_str(Mode m);
Mode mode_from_str(std::string_view s);  // throws ConfigError

struct Task {
  std::string id;
  std::string question;
  std::vector<std::string> images;
  std::optional<std::string> gold;
  std::string source;
  std::optional<Mode> mode;  // overrides the run mode for this task
};

json to_json(const Task& t);
/// Accepts {id, question, images|image_paths, gold|gold_answer?, source?, mode?}.
Task task_from_json(const json& j);
/// Throws DataError when the question is empty or an image is missing.
void validate_task(const Task& t);

struct EpisodeConfig {
  Mode mode = Mode::DeepResearch;
  int max_turns = 12;
  int max_total_tokens = 32768;  // generated tokens across the episode
  bool image_search = true;
  bool text_search = true;
  bool web_visit = true;
  bool code = true;
  double temperature = 0.7;
  std::uint64_t seed = 0;
  int max_tokens_per_turn = 0;  // passthrough, 0 = endpoint default
  int endpoint_retries = 2;
  int malformed_retries = 1;
  std::filesystem::path workspace_root = "workspace";
  /// Replay only: per-turn tool latencies of the stored trajectory, used in
  /// place of the dispatch time. Indexed like Trajectory::turns.
  std::vector<double> recorded_tool_latency_s;
};

/// Applies mode constraints: Direct and Plan get one turn and no tools;
/// General keeps only the code tool.
EpisodeConfig effective_config(EpisodeConfig cfg);
std::vector<protocol::ToolName> enabled_tools(const EpisodeConfig& cfg);
bool tool_enabled(const EpisodeConfig& cfg, protocol::ToolName t);

/// Byte-stable per mode.
std::string build_system_prompt(Mode mode);

enum class Termination { Answered, MaxTurns, TokenBudget, ModelError, ToolFailure };

std::string_view termination_str(Termination t);
Termination termination_from_str(std::string_view s);

struct Turn {
  protocol::TurnSegments seg;
  std::optional<protocol::Observation> observation;
  double model_latency_s = 0.0;
  double tool_latency_s = 0.0;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  bool tokens_estimated = false;
  std::string finish_reason;
  bool discarded = false;  // malformed turn that was retried; not part of the history
};

struct Trajectory {
  Task task;
  Mode mode = Mode::DeepResearch;
  int rollout = 0;
  std::uint64_t seed = 0;
  std::vector<Turn> turns;
  std::optional<std::string> final_answer;
  Termination termination = Termination::MaxTurns;
  std::string error;
  // Effective limits the episode ran under; replay reuses them.
  int max_turns = 0;
  int max_total_tokens = 0;
  std::vector<std::string> tools;

  int total_tokens() const;  // sum of completion tokens
  double model_time_s() const;
  double tool_time_s() const;
  /// Turns that form the conversation (not discarded).
  std::vector<const Turn*> history() const;
  std::filesystem::path workspace(const std::filesystem::path& root) const;
};

json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const json& j);
/// One JSONL line; the byte-identity unit for replay.
std::string trajectory_line(const Trajectory& t);

/// Workspace for one rollout: <root>/<task id>/r<k>.
std::filesystem::path episode_workspace(const std::filesystem::path& root, const std::string& task_id, int rollout);

/// Messages for the next model call: pure function of task, config and turns.
std::vector<llm::ChatMessage> build_messages(const Task& task, const EpisodeConfig& cfg,
                                             const std::vector<Turn>& turns,
                                             const std::filesystem::path& workspace);

/// Workspace-relative names the task images get inside the episode workspace.
std::vector<std::string> staged_image_names(const Task& task);

/// Runs one episode. Endpoint failures end the trajectory with ModelError; an
/// unreachable sandbox or transcript miss ends it with ToolFailure.
Trajectory run_episode(const Task& task, const EpisodeConfig& cfg, llm::ChatEndpoint& model,
                       toolbox::ToolRegistry& tools, int rollout = 0);

struct RolloutSet {
  Task task;
  std::vector<Trajectory> trajectories;
  std::vector<bool> agreement;
  std::vector<judge::JudgeResult> judgements;
};

/// n episodes with seeds cfg.seed + k; agreement judged against gold.
RolloutSet run_rollouts(const Task& task, const EpisodeConfig& cfg, int n, llm::ChatEndpoint& model,
                        toolbox::ToolRegistry& tools, llm::ChatEndpoint* judge);

/// All (task, rollout) episodes, ordered task-major. The parallel variant
/// schedules episodes with OpenMP; both produce identical output.
std::vector<Trajectory> generate_batch(const std::vector<Task>& tasks, const EpisodeConfig& cfg, int n,
                                       llm::ChatEndpoint& model, toolbox::ToolRegistry& tools);
std::vector<Trajectory> generate_batch_serial(const std::vector<Task>& tasks, const EpisodeConfig& cfg, int n,
                                              llm::ChatEndpoint& model, toolbox::ToolRegistry& tools);

/// Serves the recorded assistant turns of a trajectory in order.
class ReplayEndpoint : public llm::ChatEndpoint {
 public:
  explicit ReplayEndpoint(const Trajectory& t);
  llm::ChatResponse complete(const llm::ChatRequest& req) override;

 private:
  std::vector<Turn> turns_;
  std::string error_;
  std::size_t next_ = 0;
};

/// Config that reproduces a stored trajectory's episode.
EpisodeConfig replay_config(const Trajectory& t, EpisodeConfig base);

}  // namespace mmagent::orchestrator
