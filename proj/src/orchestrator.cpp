#include "mmagent/orchestrator.hpp"

#include <omp.h>

#include <algorithm>
#include <cctype>
#include <set>

#include "mmagent/prompts.hpp"

namespace mmagent::orchestrator {

namespace fs = std::filesystem;
using protocol::ToolName;
using protocol::TurnSegments;

std::string_view mode_str(Mode m) {
  switch (m) {
    case Mode::General: return "general";
    case Mode::DeepResearch: return "deep_research";
    case Mode::Plan: return "plan";
    case Mode::Direct: return "direct";
  }
  return "deep_research";
}

Mode mode_from_str(std::string_view s) {
  auto l = to_lower(s);
  if (l == "general") return Mode::General;
  if (l == "deep_research" || l == "deepresearch" || l == "search") return Mode::DeepResearch;
  if (l == "plan") return Mode::Plan;
  if (l == "direct") return Mode::Direct;
  throw ConfigError("unknown mode: " + std::string(s));
}

std::string_view termination_str(Termination t) {
  switch (t) {
    case Termination::Answered: return "answered";
    case Termination::MaxTurns: return "max_turns";
    case Termination::TokenBudget: return "token_budget";
    case Termination::ModelError: return "model_error";
    case Termination::ToolFailure: return "tool_failure";
  }
  return "model_error";
}

Termination termination_from_str(std::string_view s) {
  for (auto t : {Termination::Answered, Termination::MaxTurns, Termination::TokenBudget, Termination::ModelError,
                 Termination::ToolFailure})
    if (termination_str(t) == s) return t;
  throw DataError("unknown termination: " + std::string(s));
}

// ---- tasks ---------------------------------------------------------------------

json to_json(const Task& t) {
  json j = {{"id", t.id}, {"question", t.question}, {"images", t.images}, {"source", t.source}};
  if (t.gold) j["gold"] = *t.gold;
  if (t.mode) j["mode"] = mode_str(*t.mode);
  return j;
}

Task task_from_json(const json& j) {
  Task t;
  try {
    t.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    t.question = j.at("question").get<std::string>();
    if (j.contains("images")) t.images = j["images"].get<std::vector<std::string>>();
    else if (j.contains("image_paths")) t.images = j["image_paths"].get<std::vector<std::string>>();
    for (const char* k : {"gold", "gold_answer"})
      if (j.contains(k) && j[k].is_string()) t.gold = j[k].get<std::string>();
    t.source = j.value("source", "");
    if (j.contains("mode")) t.mode = mode_from_str(j["mode"].get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("bad task record: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("bad task record: ") + e.what());
  }
  return t;
}

void validate_task(const Task& t) {
  if (t.id.empty()) throw DataError("task has an empty id");
  if (is_blank(t.question)) throw DataError("task " + t.id + " has an empty question");
  for (const auto& img : t.images) {
    std::error_code ec;
    if (!fs::is_regular_file(img, ec)) throw DataError("task " + t.id + ": image not found: " + img);
  }
}

// ---- config / prompts ----------------------------------------------------------

EpisodeConfig effective_config(EpisodeConfig cfg) {
  if (cfg.max_turns < 1) throw ConfigError("episode.max_turns must be >= 1");
  if (cfg.max_total_tokens < 1) throw ConfigError("episode.max_total_tokens must be >= 1");
  switch (cfg.mode) {
    case Mode::Direct:
    case Mode::Plan:
      cfg.max_turns = 1;
      cfg.image_search = cfg.text_search = cfg.web_visit = cfg.code = false;
      break;
    case Mode::General:
      cfg.image_search = cfg.text_search = cfg.web_visit = false;
      break;
    case Mode::DeepResearch:
      break;
  }
  return cfg;
}

bool tool_enabled(const EpisodeConfig& cfg, ToolName t) {
  switch (t) {
    case ToolName::ImageSearch: return cfg.image_search;
    case ToolName::TextSearch: return cfg.text_search;
    case ToolName::WebVisit: return cfg.web_visit;
    case ToolName::Code: return cfg.code;
  }
  return false;
}

std::vector<ToolName> enabled_tools(const EpisodeConfig& cfg) {
  std::vector<ToolName> out;
  for (auto t : protocol::kAllTools)
    if (tool_enabled(cfg, t)) out.push_back(t);
  return out;
}

std::string build_system_prompt(Mode mode) {
  switch (mode) {
    case Mode::DeepResearch:
      return prompts::tool_system_prompt({std::begin(protocol::kAllTools), std::end(protocol::kAllTools)});
    case Mode::General: return prompts::tool_system_prompt({ToolName::Code});
    case Mode::Plan: return prompts::planner_system_prompt();
    case Mode::Direct: return prompts::direct_system_prompt();
  }
  return {};
}

// ---- trajectories --------------------------------------------------------------

int Trajectory::total_tokens() const {
  int n = 0;
  for (const auto& t : turns) n += t.completion_tokens;
  return n;
}

double Trajectory::model_time_s() const {
  double s = 0;
  for (const auto& t : turns) s += t.model_latency_s;
  return s;
}

double Trajectory::tool_time_s() const {
  double s = 0;
  for (const auto& t : turns) s += t.tool_latency_s;
  return s;
}

std::vector<const Turn*> Trajectory::history() const {
  std::vector<const Turn*> out;
  for (const auto& t : turns)
    if (!t.discarded) out.push_back(&t);
  return out;
}

fs::path Trajectory::workspace(const fs::path& root) const { return episode_workspace(root, task.id, rollout); }

json to_json(const Trajectory& t) {
  json turns = json::array();
  for (const auto& turn : t.turns) {
    json j = protocol::to_json(turn.seg);
    if (turn.observation) j["observation"] = protocol::to_json(*turn.observation);
    j["model_latency_s"] = turn.model_latency_s;
    j["tool_latency_s"] = turn.tool_latency_s;
    j["prompt_tokens"] = turn.prompt_tokens;
    j["completion_tokens"] = turn.completion_tokens;
    j["tokens_estimated"] = turn.tokens_estimated;
    j["finish_reason"] = turn.finish_reason;
    j["discarded"] = turn.discarded;
    turns.push_back(std::move(j));
  }
  json j = {{"task", to_json(t.task)},
            {"mode", mode_str(t.mode)},
            {"rollout", t.rollout},
            {"seed", t.seed},
            {"turns", turns},
            {"termination", termination_str(t.termination)},
            {"error", t.error},
            {"total_tokens", t.total_tokens()},
            {"max_turns", t.max_turns},
            {"max_total_tokens", t.max_total_tokens},
            {"tools", t.tools}};
  j["final_answer"] = t.final_answer ? json(*t.final_answer) : json(nullptr);
  return j;
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  try {
    t.task = task_from_json(j.at("task"));
    t.mode = mode_from_str(j.at("mode").get<std::string>());
    t.rollout = j.value("rollout", 0);
    t.seed = j.value("seed", std::uint64_t{0});
    for (const auto& tj : j.at("turns")) {
      Turn turn;
      turn.seg = protocol::turn_from_json(tj);
      if (tj.contains("observation") && !tj["observation"].is_null())
        turn.observation = protocol::observation_from_json(tj["observation"]);
      turn.model_latency_s = tj.value("model_latency_s", 0.0);
      turn.tool_latency_s = tj.value("tool_latency_s", 0.0);
      turn.prompt_tokens = tj.value("prompt_tokens", 0);
      turn.completion_tokens = tj.value("completion_tokens", 0);
      turn.tokens_estimated = tj.value("tokens_estimated", false);
      turn.finish_reason = tj.value("finish_reason", "");
      turn.discarded = tj.value("discarded", false);
      t.turns.push_back(std::move(turn));
    }
    if (j.contains("final_answer") && j["final_answer"].is_string()) t.final_answer = j["final_answer"].get<std::string>();
    t.termination = termination_from_str(j.at("termination").get<std::string>());
    t.error = j.value("error", "");
    t.max_turns = j.value("max_turns", 0);
    t.max_total_tokens = j.value("max_total_tokens", 0);
    t.tools = j.value("tools", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw DataError(std::string("bad trajectory record: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("bad trajectory record: ") + e.what());
  }
  return t;
}

std::string trajectory_line(const Trajectory& t) { return dump_json(to_json(t)); }

// ---- episode ---------------------------------------------------------------------

fs::path episode_workspace(const fs::path& root, const std::string& task_id, int rollout) {
  std::string safe;
  for (char c : task_id) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  if (safe.empty() || safe == "." || safe == "..") safe = "_";
  return root / safe / ("r" + std::to_string(rollout));
}

std::vector<std::string> staged_image_names(const Task& task) {
  std::vector<std::string> out;
  std::set<std::string> used;
  for (std::size_t i = 0; i < task.images.size(); ++i) {
    auto name = fs::path(task.images[i]).filename().string();
    if (name.empty() || used.count(name)) name = "input_" + std::to_string(i + 1) + "_" + name;
    used.insert(name);
    out.push_back(name);
  }
  return out;
}

std::vector<llm::ChatMessage> build_messages(const Task& task, const EpisodeConfig& cfg,
                                             const std::vector<Turn>& turns, const fs::path& workspace) {
  std::vector<llm::ChatMessage> msgs;
  msgs.push_back({"system", build_system_prompt(cfg.mode), {}});
  llm::ChatMessage user{"user", task.question, {}};
  auto names = staged_image_names(task);
  if (!names.empty()) {
    user.content += "\n\nImage paths:";
    for (const auto& n : names) {
      user.content += "\n" + n;
      user.images.push_back((workspace / n).string());
    }
  }
  msgs.push_back(std::move(user));
  for (const auto& turn : turns) {
    if (turn.discarded) continue;
    msgs.push_back({"assistant", turn.seg.raw, {}});
    if (turn.observation) {
      llm::ChatMessage obs{"observation", protocol::render_observation(*turn.observation), {}};
      if (const auto* c = turn.observation->code())
        for (const auto& rel : c->produced_images) obs.images.push_back((workspace / rel).string());
      msgs.push_back(std::move(obs));
    }
  }
  return msgs;
}

namespace {

TurnSegments parse_plan_turn(const std::string& text) {
  TurnSegments seg;
  seg.raw = text;
  std::string rest = text;
  auto open = text.find(protocol::kThinkOpen);
  if (open != std::string::npos) {
    auto close = text.find(protocol::kThinkClose, open);
    if (close != std::string::npos) {
      seg.think = trim(std::string_view(text).substr(open + protocol::kThinkOpen.size(),
                                                     close - open - protocol::kThinkOpen.size()));
      rest = text.substr(0, open) + text.substr(close + protocol::kThinkClose.size());
    }
  }
  rest = trim(rest);
  if (rest.empty())
    seg.action = protocol::Malformed{protocol::MalformedReason::MissingAction, "empty plan"};
  else
    seg.action = protocol::FinalAnswer{rest};
  return seg;
}

void stage_images(const Task& task, const fs::path& workspace) {
  std::error_code ec;
  fs::remove_all(workspace, ec);
  fs::create_directories(workspace);
  auto names = staged_image_names(task);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!fs::is_regular_file(task.images[i]))
      throw DataError("task " + task.id + ": image not found: " + task.images[i]);
    fs::copy_file(task.images[i], workspace / names[i], fs::copy_options::overwrite_existing);
  }
}

}  // namespace

Trajectory run_episode(const Task& task, const EpisodeConfig& base_cfg, llm::ChatEndpoint& model,
                       toolbox::ToolRegistry& tools, int rollout) {
  EpisodeConfig mode_cfg = base_cfg;
  if (task.mode) mode_cfg.mode = *task.mode;
  const EpisodeConfig cfg = effective_config(mode_cfg);

  Trajectory traj;
  traj.task = task;
  traj.mode = cfg.mode;
  traj.rollout = rollout;
  traj.seed = cfg.seed;
  traj.max_turns = cfg.max_turns;
  traj.max_total_tokens = cfg.max_total_tokens;
  for (auto t : enabled_tools(cfg)) traj.tools.emplace_back(protocol::tool_name_str(t));

  const fs::path workspace = episode_workspace(cfg.workspace_root, task.id, rollout);
  stage_images(task, workspace);

  int accepted = 0;
  int consecutive_malformed = 0;
  int next_image = 1;
  bool ended = false;

  while (accepted < cfg.max_turns) {
    llm::ChatRequest req;
    req.messages = build_messages(task, cfg, traj.turns, workspace);
    req.temperature = cfg.temperature;
    req.seed = cfg.seed;
    req.max_tokens = cfg.max_tokens_per_turn;

    llm::ChatResponse resp;
    std::string buffer;
    protocol::StopDecision stop;
    bool got = false;
    for (int attempt = 0; attempt <= cfg.endpoint_retries && !got; ++attempt) {
      buffer.clear();
      stop = {};
      try {
        resp = model.stream(req, [&](std::string_view delta) {
          buffer.append(delta);
          if (cfg.mode == Mode::Plan) return true;
          stop = protocol::detect_stop(buffer);
          return stop.kind == protocol::StopDecision::Kind::AwaitMore;
        });
        got = true;
      } catch (const llm::EndpointError& e) {
        traj.error = e.what();
      }
    }
    if (!got) {
      traj.termination = Termination::ModelError;
      ended = true;
      break;
    }
    traj.error.clear();

    Turn turn;
    const bool stopped = stop.kind != protocol::StopDecision::Kind::AwaitMore;
    const std::string text = stopped ? buffer.substr(0, stop.offset) : buffer;
    turn.seg = cfg.mode == Mode::Plan ? parse_plan_turn(text) : protocol::parse_turn(text);
    turn.seg.raw = text;
    turn.model_latency_s = resp.latency_s;
    if (stopped)
      turn.finish_reason = "stop";
    else
      turn.finish_reason = resp.finish_reason.empty() || resp.finish_reason == "stopped" ? "stop" : resp.finish_reason;
    if (resp.usage.reported && !stopped) {
      turn.prompt_tokens = resp.usage.prompt_tokens;
      turn.completion_tokens = resp.usage.completion_tokens;
    } else if (resp.usage.reported && resp.usage.completion_tokens > 0 && text.size() == resp.content.size()) {
      turn.prompt_tokens = resp.usage.prompt_tokens;
      turn.completion_tokens = resp.usage.completion_tokens;
    } else {
      turn.prompt_tokens = estimate_tokens(llm::request_text(req));
      turn.completion_tokens = estimate_tokens(text);
      turn.tokens_estimated = true;
    }

    if (turn.seg.is_malformed()) {
      const auto& m = std::get<protocol::Malformed>(turn.seg.action);
      ++consecutive_malformed;
      if (cfg.mode != Mode::Direct && consecutive_malformed <= cfg.malformed_retries) {
        turn.discarded = true;
        traj.turns.push_back(std::move(turn));
        continue;
      }
      traj.turns.push_back(std::move(turn));
      traj.termination = Termination::ModelError;
      traj.error = "malformed turn: " + std::string(protocol::malformed_reason_str(m.reason));
      ended = true;
      break;
    }
    consecutive_malformed = 0;
    ++accepted;

    if (const auto* ans = turn.seg.answer()) {
      traj.final_answer = ans->text;
      traj.turns.push_back(std::move(turn));
      traj.termination = Termination::Answered;
      ended = true;
      break;
    }

    const protocol::ToolCall call = *turn.seg.tool_call();
    traj.turns.push_back(std::move(turn));
    if (traj.total_tokens() > cfg.max_total_tokens) {
      traj.termination = Termination::TokenBudget;
      ended = true;
      break;
    }
    if (accepted >= cfg.max_turns) break;

    Turn& cur = traj.turns.back();
    if (!tool_enabled(cfg, call.name)) {
      cur.observation = protocol::Observation{
          {protocol::ErrorEntry{"tool " + std::string(protocol::tool_name_str(call.name)) +
                                    " is not available in this mode",
                                ""}}};
      continue;
    }
    try {
      auto result = tools.dispatch(call, workspace, next_image);
      cur.observation = std::move(result.observation);
      const auto k = traj.turns.size() - 1;
      cur.tool_latency_s =
          k < cfg.recorded_tool_latency_s.size() ? cfg.recorded_tool_latency_s[k] : result.elapsed_s;
      if (const auto* c = cur.observation->code()) next_image += static_cast<int>(c->produced_images.size());
    } catch (const toolbox::SandboxUnreachable& e) {
      traj.termination = Termination::ToolFailure;
      traj.error = e.what();
      ended = true;
      break;
    } catch (const toolbox::TranscriptMiss& e) {
      traj.termination = Termination::ToolFailure;
      traj.error = e.what();
      ended = true;
      break;
    }
  }
  if (!ended) traj.termination = Termination::MaxTurns;
  return traj;
}

// ---- rollouts / batches ---------------------------------------------------------

RolloutSet run_rollouts(const Task& task, const EpisodeConfig& cfg, int n, llm::ChatEndpoint& model,
                        toolbox::ToolRegistry& tools, llm::ChatEndpoint* judge) {
  if (n < 1) throw ConfigError("rollouts must be >= 1");
  RolloutSet set;
  set.task = task;
  for (int k = 0; k < n; ++k) {
    EpisodeConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(k);
    set.trajectories.push_back(run_episode(task, c, model, tools, k));
  }
  for (const auto& t : set.trajectories) {
    judge::JudgeResult r;
    if (task.gold && t.final_answer)
      r = judge::judge_answer(task.question, *task.gold, *t.final_answer, judge);
    else
      r.raw = task.gold ? "no final answer" : "no gold answer";
    if (!t.final_answer && task.gold) r.verdict = judge::Verdict::Negative;
    set.agreement.push_back(r.verdict == judge::Verdict::Positive);
    set.judgements.push_back(std::move(r));
  }
  return set;
}

namespace {

Trajectory run_slot(const std::vector<Task>& tasks, const EpisodeConfig& cfg, int n, std::size_t slot,
                    llm::ChatEndpoint& model, toolbox::ToolRegistry& tools) {
  const auto& task = tasks[slot / static_cast<std::size_t>(n)];
  const int k = static_cast<int>(slot % static_cast<std::size_t>(n));
  EpisodeConfig c = cfg;
  c.seed = cfg.seed + static_cast<std::uint64_t>(k);
  return run_episode(task, c, model, tools, k);
}

void check_batch(const std::vector<Task>& tasks, int n) {
  if (n < 1) throw ConfigError("rollouts must be >= 1");
  std::set<std::string> ids;
  for (const auto& t : tasks) {
    validate_task(t);
    if (!ids.insert(t.id).second) throw DataError("duplicate task id: " + t.id);
  }
}

}  // namespace

std::vector<Trajectory> generate_batch_serial(const std::vector<Task>& tasks, const EpisodeConfig& cfg, int n,
                                              llm::ChatEndpoint& model, toolbox::ToolRegistry& tools) {
  check_batch(tasks, n);
  std::vector<Trajectory> out(tasks.size() * static_cast<std::size_t>(n));
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = run_slot(tasks, cfg, n, s, model, tools);
  return out;
}

std::vector<Trajectory> generate_batch(const std::vector<Task>& tasks, const EpisodeConfig& cfg, int n,
                                       llm::ChatEndpoint& model, toolbox::ToolRegistry& tools) {
  check_batch(tasks, n);
  const auto total = static_cast<std::int64_t>(tasks.size() * static_cast<std::size_t>(n));
  std::vector<Trajectory> out(static_cast<std::size_t>(total));
  std::vector<std::string> errors(out.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t s = 0; s < total; ++s) {
    try {
      out[static_cast<std::size_t>(s)] = run_slot(tasks, cfg, n, static_cast<std::size_t>(s), model, tools);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(s)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  return out;
}

// ---- replay ----------------------------------------------------------------------

ReplayEndpoint::ReplayEndpoint(const Trajectory& t) : turns_(t.turns), error_(t.error) {}

llm::ChatResponse ReplayEndpoint::complete(const llm::ChatRequest&) {
  if (next_ >= turns_.size()) throw llm::EndpointError(error_.empty() ? "replay exhausted" : error_);
  const auto& turn = turns_[next_++];
  llm::ChatResponse r;
  r.content = turn.seg.raw;
  r.latency_s = turn.model_latency_s;
  r.finish_reason = turn.finish_reason;
  r.usage.prompt_tokens = turn.prompt_tokens;
  r.usage.completion_tokens = turn.completion_tokens;
  r.usage.reported = !turn.tokens_estimated;
  return r;
}

EpisodeConfig replay_config(const Trajectory& t, EpisodeConfig base) {
  base.mode = t.mode;
  base.seed = t.seed;
  if (t.max_turns > 0) base.max_turns = t.max_turns;
  if (t.max_total_tokens > 0) base.max_total_tokens = t.max_total_tokens;
  if (!t.tools.empty() || t.mode == Mode::DeepResearch || t.mode == Mode::General) {
    base.image_search = base.text_search = base.web_visit = base.code = false;
    for (const auto& name : t.tools) {
      if (auto tool = protocol::tool_from_str(name)) {
        switch (*tool) {
          case ToolName::ImageSearch: base.image_search = true; break;
          case ToolName::TextSearch: base.text_search = true; break;
          case ToolName::WebVisit: base.web_visit = true; break;
          case ToolName::Code: base.code = true; break;
        }
      }
    }
  }
  base.endpoint_retries = 0;
  base.recorded_tool_latency_s.clear();
  for (const auto& turn : t.turns) base.recorded_tool_latency_s.push_back(turn.tool_latency_s);
  return base;
}

}  // namespace mmagent::orchestrator
