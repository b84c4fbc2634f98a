#include <doctest.h>

#include <atomic>

#include "mmagent/config.hpp"
#include "mmagent/orchestrator.hpp"
#include "mmagent/prompts.hpp"
#include "support/fixtures.hpp"

using namespace mmagent;
using namespace mmagent::orchestrator;
namespace fs = std::filesystem;

namespace {

std::string body_of(const protocol::Observation& obs) {
  auto text = protocol::render_observation(obs);
  const auto open = protocol::kObservationOpen.size();
  return trim(text.substr(open, text.size() - open - protocol::kObservationClose.size()));
}

/// Wraps an endpoint and keeps every request it saw.
struct Recorder : llm::ChatEndpoint {
  llm::EndpointPtr inner;
  std::vector<llm::ChatRequest> seen;
  explicit Recorder(llm::EndpointPtr e) : inner(std::move(e)) {}
  llm::ChatResponse complete(const llm::ChatRequest& req) override {
    seen.push_back(req);
    return inner->complete(req);
  }
};

std::string search_call(const std::string& q) {
  return "<think>look it up</think><tool_call>" +
         json{{"name", "text_search"}, {"arguments", {{"queries", {q}}}}}.dump() + "</tool_call>";
}

Task plain_task(const std::string& id, const std::string& question) {
  Task t;
  t.id = id;
  t.question = question;
  return t;
}

/// Trajectory line with measured tool wall time zeroed; live runs differ only there.
std::string untimed_line(Trajectory t) {
  for (auto& turn : t.turns) turn.tool_latency_s = 0.0;
  return trajectory_line(t);
}

toolbox::ToolRegistry empty_registry() {
  return toolbox::ToolRegistry({}, std::make_shared<toolbox::FixtureProvider>(json::object()),
                               std::make_shared<toolbox::FixturePageFetcher>(json::object()), nullptr, nullptr);
}

}  // namespace

TEST_CASE("crop navigation trace: four turns, three observations, crops on disk") {
  auto dir = fixtures::temp_dir("orch-crop");
  auto rig = fixtures::trace_rig(fixtures::crop_navigation_trace(), dir);
  auto t = run_episode(rig.task, rig.episode, *rig.model, *rig.registry);
  REQUIRE(t.turns.size() == 4);
  CHECK(t.termination == Termination::Answered);
  REQUIRE(t.final_answer);
  CHECK(*t.final_answer == "White");
  int observations = 0;
  for (const auto& turn : t.turns) observations += turn.observation ? 1 : 0;
  CHECK(observations == 3);
  for (const char* crop : {"crop_1.png", "crop_2.png", "crop_3.png"}) CHECK(fs::exists(t.workspace(dir / "ws") / crop));
}

TEST_CASE("all three traces reproduce their observations byte for byte") {
  for (const auto& trace :
       {fixtures::crop_navigation_trace(), fixtures::geolocation_search_trace(), fixtures::interleaved_trace()}) {
    auto dir = fixtures::temp_dir("orch-trace");
    auto rig = fixtures::trace_rig(trace, dir);
    auto t = run_episode(rig.task, rig.episode, *rig.model, *rig.registry);
    REQUIRE(t.turns.size() == rig.turns.size());
    for (std::size_t i = 0; i < t.turns.size(); ++i) {
      CHECK(t.turns[i].seg == rig.turns[i].seg);
      REQUIRE(t.turns[i].observation.has_value() == rig.turns[i].observation.has_value());
      if (rig.turns[i].observation) CHECK(body_of(*t.turns[i].observation) == *rig.turns[i].observation);
    }
    CHECK(t.final_answer == rig.turns.back().seg.answer()->text);
  }
}

TEST_CASE("every model call sees exactly the prior turns and observations") {
  auto dir = fixtures::temp_dir("orch-history");
  auto rig = fixtures::trace_rig(fixtures::interleaved_trace(), dir);
  Recorder rec(rig.model);
  auto t = run_episode(rig.task, rig.episode, rec, *rig.registry);
  REQUIRE(rec.seen.size() == t.turns.size());
  for (std::size_t k = 0; k < rec.seen.size(); ++k) {
    const auto& msgs = rec.seen[k].messages;
    REQUIRE(msgs.size() == 2 + 2 * k);
    CHECK(msgs[0].role == "system");
    CHECK(msgs[1].role == "user");
    CHECK(msgs[1].images.size() == 1);
    for (std::size_t j = 0; j < k; ++j) {
      CHECK(msgs[2 + 2 * j].role == "assistant");
      CHECK(msgs[2 + 2 * j].content == t.turns[j].seg.raw);
      CHECK(msgs[3 + 2 * j].role == "observation");
      CHECK(msgs[3 + 2 * j].content == protocol::render_observation(*t.turns[j].observation));
    }
    if (k >= 1) CHECK(msgs[3].images.size() == 1);  // the crop is attached after the code turn
  }
}

TEST_CASE("direct mode makes exactly one call and uses no tools") {
  auto dir = fixtures::temp_dir("orch-direct");
  std::atomic<int> calls{0};
  llm::FunctionEndpoint model([&](const llm::ChatRequest& req) {
    ++calls;
    CHECK(req.messages[0].content == build_system_prompt(Mode::Direct));
    llm::ChatResponse r;
    r.content = "<think>t</think><answer>4</answer>";
    return r;
  });
  auto reg = empty_registry();
  EpisodeConfig cfg;
  cfg.mode = Mode::Direct;
  cfg.workspace_root = dir;
  auto t = run_episode(plain_task("d1", "how many?"), cfg, model, reg);
  CHECK(calls == 1);
  CHECK(t.turns.size() == 1);
  CHECK(t.final_answer == "4");
  CHECK(t.tools.empty());

  llm::FunctionEndpoint tool_model([&](const llm::ChatRequest&) {
    llm::ChatResponse r;
    r.content = search_call("x");
    return r;
  });
  auto t2 = run_episode(plain_task("d2", "q"), cfg, tool_model, reg);
  CHECK(t2.turns.size() == 1);
  CHECK(t2.termination == Termination::MaxTurns);
  CHECK_FALSE(t2.turns[0].observation);
}

TEST_CASE("an episode that never answers stops at max_turns") {
  auto dir = fixtures::temp_dir("orch-max");
  llm::ScriptedChatEndpoint model(json{{"rules", json::array()}, {"default", search_call("again")}});
  auto reg = empty_registry();
  EpisodeConfig cfg;
  cfg.max_turns = 6;
  cfg.workspace_root = dir;
  auto t = run_episode(plain_task("m", "q"), cfg, model, reg);
  CHECK(t.termination == Termination::MaxTurns);
  CHECK(t.turns.size() == 6);
  CHECK_FALSE(t.final_answer);
}

TEST_CASE("malformed turns are retried once, then end the episode") {
  auto dir = fixtures::temp_dir("orch-malformed");
  auto reg = empty_registry();
  EpisodeConfig cfg;
  cfg.workspace_root = dir;

  llm::ScriptedChatEndpoint once(json{
      {"rules", json::array()},
      {"default", "<answer>no think</answer>"}});
  auto bad = run_episode(plain_task("x", "q"), cfg, once, reg);
  CHECK(bad.termination == Termination::ModelError);
  CHECK(bad.turns.size() == 2);
  CHECK(bad.turns[0].discarded);
  CHECK(bad.error.find("MissingThink") != std::string::npos);

  int n = 0;
  llm::FunctionEndpoint recover([&](const llm::ChatRequest& req) {
    llm::ChatResponse r;
    CHECK(req.messages.size() == 2);  // discarded turn is not in the history
    r.content = n++ == 0 ? "<answer>a</answer>" : "<think>t</think><answer>a</answer>";
    return r;
  });
  auto ok = run_episode(plain_task("y", "q"), cfg, recover, reg);
  CHECK(ok.termination == Termination::Answered);
  CHECK(ok.history().size() == 1);
}

TEST_CASE("endpoint failures are retried and then recorded as ModelError") {
  auto dir = fixtures::temp_dir("orch-endpoint");
  int calls = 0;
  llm::FunctionEndpoint model([&](const llm::ChatRequest&) -> llm::ChatResponse {
    ++calls;
    throw llm::EndpointError("service unavailable", 503);
  });
  auto reg = empty_registry();
  EpisodeConfig cfg;
  cfg.workspace_root = dir;
  cfg.endpoint_retries = 2;
  auto t = run_episode(plain_task("e", "q"), cfg, model, reg);
  CHECK(calls == 3);
  CHECK(t.termination == Termination::ModelError);
  CHECK(t.error == "service unavailable");
  CHECK(t.turns.empty());
}

TEST_CASE("token budget counts completion tokens") {
  auto dir = fixtures::temp_dir("orch-budget");
  llm::ScriptedChatEndpoint model(
      json{{"rules", json::array()}, {"default", {{"content", search_call("q")}, {"completion_tokens", 8}}}});
  auto reg = empty_registry();
  EpisodeConfig cfg;
  cfg.workspace_root = dir;
  cfg.max_total_tokens = 10;
  auto t = run_episode(plain_task("b", "q"), cfg, model, reg);
  CHECK(t.termination == Termination::TokenBudget);
  CHECK(t.turns.size() == 2);
  CHECK(t.total_tokens() == 16);
}

TEST_CASE("missing sandbox ends the episode with ToolFailure") {
  auto dir = fixtures::temp_dir("orch-sandbox");
  llm::ScriptedChatEndpoint model(
      json{{"rules", json::array()}, {"default", "<think>t</think><code>print(1)</code>"}});
  auto reg = empty_registry();
  EpisodeConfig cfg;
  cfg.workspace_root = dir;
  auto t = run_episode(plain_task("s", "q"), cfg, model, reg);
  CHECK(t.termination == Termination::ToolFailure);
  CHECK(t.turns.size() == 1);
}

TEST_CASE("general mode rejects search tools with an error observation") {
  auto dir = fixtures::temp_dir("orch-general");
  int n = 0;
  llm::FunctionEndpoint model([&](const llm::ChatRequest&) {
    llm::ChatResponse r;
    r.content = n++ == 0 ? search_call("q") : "<think>t</think><answer>a</answer>";
    return r;
  });
  auto reg = empty_registry();
  EpisodeConfig cfg;
  cfg.mode = Mode::General;
  cfg.workspace_root = dir;
  auto t = run_episode(plain_task("g", "q"), cfg, model, reg);
  REQUIRE(t.turns.size() == 2);
  REQUIRE(t.turns[0].observation);
  CHECK(std::holds_alternative<protocol::ErrorEntry>(t.turns[0].observation->entries[0]));
  CHECK(t.tools == std::vector<std::string>{"code"});
}

TEST_CASE("rollouts: seeds differ per rollout and agreement follows the gold answer") {
  auto dir = fixtures::temp_dir("orch-rollouts");
  json rules = json::array();
  const char* answers[] = {"Paris", "Lyon", "  paris ", "Rome"};
  for (int k = 0; k < 4; ++k)
    rules.push_back({{"contains", {"capital"}}, {"seed", 100 + k},
                     {"replies", {std::string("<think>t</think><answer>") + answers[k] + "</answer>"}}});
  llm::ScriptedChatEndpoint model(json{{"rules", rules}});
  auto reg = empty_registry();
  EpisodeConfig cfg;
  cfg.seed = 100;
  cfg.workspace_root = dir;
  auto task = plain_task("r", "capital of France?");
  task.gold = "Paris";
  auto set = run_rollouts(task, cfg, 4, model, reg, nullptr);
  REQUIRE(set.trajectories.size() == 4);
  CHECK(set.agreement == std::vector<bool>{true, false, true, false});
  for (int k = 0; k < 4; ++k) {
    CHECK(set.trajectories[k].rollout == k);
    CHECK(set.trajectories[k].seed == 100u + k);
  }
  CHECK(set.judgements[1].verdict == judge::Verdict::Pending);
  CHECK_THROWS_AS(run_rollouts(task, cfg, 0, model, reg, nullptr), ConfigError);
}

TEST_CASE("system prompts are stable and list exactly the enabled tools") {
  const auto deep = build_system_prompt(Mode::DeepResearch);
  CHECK(deep == build_system_prompt(Mode::DeepResearch));
  for (auto name : {"image_search", "text_search", "web_visit", "code"}) CHECK(deep.find(name) != std::string::npos);
  const auto general = build_system_prompt(Mode::General);
  CHECK(general.find("code") != std::string::npos);
  CHECK(general.find("image_search") == std::string::npos);
  CHECK(general.find("web_visit") == std::string::npos);
  CHECK(build_system_prompt(Mode::Direct).find("tool_call") == std::string::npos);
  CHECK(build_system_prompt(Mode::Plan) == prompts::planner_system_prompt());
}

TEST_CASE("effective_config applies mode constraints") {
  EpisodeConfig c;
  c.mode = Mode::Plan;
  auto e = effective_config(c);
  CHECK(e.max_turns == 1);
  CHECK(enabled_tools(e).empty());
  c.mode = Mode::DeepResearch;
  c.max_turns = 0;
  CHECK_THROWS_AS(effective_config(c), ConfigError);
  CHECK(mode_from_str("deep_research") == Mode::DeepResearch);
  CHECK_THROWS_AS(mode_from_str("fast"), ConfigError);
}

TEST_CASE("tasks: aliases, validation and workspace naming") {
  auto t = task_from_json(json{{"id", "a/b"}, {"question", "q"}, {"image_paths", {"x.png"}}, {"gold_answer", "g"}});
  CHECK(t.images == std::vector<std::string>{"x.png"});
  CHECK(t.gold == "g");
  CHECK_THROWS_AS(validate_task(t), DataError);  // image missing
  CHECK_THROWS_AS(validate_task(plain_task("e", "   ")), DataError);
  CHECK(episode_workspace("/w", "a/b", 2) == fs::path("/w/a_b/r2"));
  CHECK(episode_workspace("/w", "..", 0) == fs::path("/w/_/r0"));
  Task dup;
  dup.images = {"/x/a.png", "/y/a.png"};
  auto names = staged_image_names(dup);
  CHECK(names[0] != names[1]);
}

TEST_CASE("trajectory JSON round trip is byte stable") {
  auto dir = fixtures::temp_dir("orch-json");
  auto rig = fixtures::trace_rig(fixtures::geolocation_search_trace(), dir);
  auto t = run_episode(rig.task, rig.episode, *rig.model, *rig.registry);
  const auto line = trajectory_line(t);
  auto back = trajectory_from_json(json::parse(line));
  CHECK(trajectory_line(back) == line);
  CHECK(back.turns.size() == t.turns.size());
  CHECK(back.tool_time_s() == doctest::Approx(t.tool_time_s()));
}

TEST_CASE("replaying a recorded episode reproduces it exactly") {
  auto dir = fixtures::temp_dir("orch-replay");
  auto tc = std::make_shared<toolbox::TranscriptCache>(dir / "transcript.jsonl", toolbox::TranscriptMode::Record);
  auto rig = fixtures::trace_rig(fixtures::interleaved_trace(), dir, tc);
  auto original = run_episode(rig.task, rig.episode, *rig.model, *rig.registry);

  auto replay_tc = std::make_shared<toolbox::TranscriptCache>(dir / "transcript.jsonl", toolbox::TranscriptMode::Replay);
  toolbox::ToolRegistry offline({}, nullptr, nullptr, nullptr, nullptr, replay_tc, rig.episode.workspace_root);
  for (int i = 0; i < 2; ++i) {
    ReplayEndpoint ep(original);
    auto again = run_episode(original.task, replay_config(original, rig.episode), ep, offline, original.rollout);
    CHECK(trajectory_line(again) == trajectory_line(original));
  }
}

TEST_CASE("parallel batch generation equals the serial reference") {
  auto dir = fixtures::temp_dir("orch-batch");
  auto desk = fixtures::write_desk_fixture(dir);
  auto cfg = config::load_config(desk.config, {"transcript.mode=\"off\""});
  auto model = config::make_endpoint(cfg, "model");
  auto reg = config::make_registry(cfg, nullptr);
  auto serial = generate_batch_serial(desk.task_list, cfg.episode, 2, *model, *reg);
  auto parallel = generate_batch(desk.task_list, cfg.episode, 2, *model, *reg);
  REQUIRE(serial.size() == desk.task_list.size() * 2);
  REQUIRE(parallel.size() == serial.size());
  for (std::size_t i = 0; i < serial.size(); ++i) CHECK(untimed_line(parallel[i]) == untimed_line(serial[i]));
  CHECK(serial[1].task.id == serial[0].task.id);
  CHECK(serial[1].rollout == 1);

  auto dup = desk.task_list;
  dup.push_back(dup.front());
  CHECK_THROWS_AS(generate_batch(dup, cfg.episode, 1, *model, *reg), DataError);
}
