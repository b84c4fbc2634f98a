// Acceptance run: one PASS/FAIL line per primary criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "mmagent/cli.hpp"
#include "mmagent/config.hpp"
#include "mmagent/curation.hpp"
#include "mmagent/evalbench.hpp"
#include "mmagent/planner.hpp"
#include "mmagent/protocol.hpp"
#include "mmagent/querygen.hpp"
#include "support/fixtures.hpp"

using namespace mmagent;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::vector<std::string> problems;
  std::string note;

  void expect(bool cond, const std::string& what) {
    if (cond) return;
    ok = false;
    if (problems.size() < 5) problems.push_back(what);
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- protocol ------------------------------------------------------------------------

bool has_tag(const std::string& s) {
  using namespace protocol;
  for (auto t : {kThinkOpen, kThinkClose, kToolCallOpen, kToolCallClose, kAnswerOpen, kAnswerClose, kCodeOpen,
                 kCodeClose, kObservationOpen, kObservationClose})
    if (s.find(t) != std::string::npos) return true;
  return false;
}

std::string gen_text(std::mt19937_64& rng, std::size_t max_len) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,;:!?'\"{}[]()<>/\\\n\t-_=+*&^%$#@~`|";
  static const char* unicode[] = {"\xc3\xa9", "\xe4\xb8\xad", "\xf0\x9f\x90\xb6"};
  while (true) {
    std::string s;
    const auto len = 1 + bounded_draw(rng, max_len);
    for (std::size_t i = 0; i < len; ++i) {
      if (bounded_draw(rng, 20) == 0) s += unicode[bounded_draw(rng, 3)];
      else s.push_back(alphabet[bounded_draw(rng, alphabet.size())]);
    }
    s = trim(s);
    if (!s.empty() && !has_tag(s) && !starts_with(s, "```")) return s;
  }
}

protocol::TurnSegments gen_turn(std::mt19937_64& rng) {
  using namespace protocol;
  TurnSegments seg;
  seg.think = gen_text(rng, 80);
  const auto pick = bounded_draw(rng, 5);
  if (pick == 0) {
    seg.action = FinalAnswer{gen_text(rng, 40)};
  } else {
    ToolCall call;
    call.name = kAllTools[pick - 1];
    if (call.name == ToolName::Code) {
      call.code = gen_text(rng, 120);
    } else {
      const auto n = 1 + bounded_draw(rng, 3);
      for (std::size_t i = 0; i < n; ++i) call.values.push_back(gen_text(rng, 30));
    }
    seg.action = call;
  }
  return seg;
}

Outcome protocol_round_trip() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    auto seg = gen_turn(rng);
    auto text = protocol::serialize_turn(seg);
    auto back = protocol::parse_turn(text);
    o.expect(back == seg && protocol::serialize_turn(back) == text, "round trip failed: " + text.substr(0, 60));
  }
  const std::vector<std::string> pieces = {"<think>", "</think>", "<answer>", "</answer>", "<tool_call>", "</tool_call>",
                                           "<code>", "</code>", "```python\n", "```", "{\"name\":", "\"text_search\"",
                                           "\"code\"", "\"arguments\":", "{\"queries\":[\"q\"]}", "{\"urls\":[]}", "}",
                                           "[", "]", "x", " ", "\n", "\xff", std::string(1, '\0')};
  int malformed = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string s;
    const auto n = bounded_draw(rng, 14);
    for (std::size_t k = 0; k < n; ++k) s += pieces[bounded_draw(rng, pieces.size())];
    try {
      auto seg = protocol::parse_turn(s);
      if (seg.is_malformed()) {
        ++malformed;
        auto r = std::get<protocol::Malformed>(seg.action).reason;
        o.expect(protocol::malformed_reason_from_str(protocol::malformed_reason_str(r)) == r, "unknown reason");
      } else {
        o.expect(!seg.think.empty() && ((seg.tool_call() != nullptr) != (seg.answer() != nullptr)),
                 "well-formed turn without exactly one action");
      }
    } catch (const std::exception& e) {
      o.expect(false, std::string("parse_turn threw: ") + e.what());
    }
  }
  const double dt = seconds_since(t0);
  o.expect(dt < 10.0, "runtime over 10 s");
  o.note = "1000 round trips, 10000 fuzz inputs (" + std::to_string(malformed) + " malformed)";
  return o;
}

// ---- traces ------------------------------------------------------------------------

std::vector<std::string> action_kinds(const std::vector<fixtures::TraceTurn>& turns) {
  std::vector<std::string> out;
  for (const auto& t : turns) {
    if (t.seg.answer()) out.push_back("answer");
    else if (t.seg.tool_call()) out.push_back(std::string(protocol::tool_name_str(t.seg.tool_call()->name)));
    else out.push_back("malformed");
  }
  return out;
}

std::string observation_body(const protocol::Observation& obs) {
  auto text = protocol::render_observation(obs);
  const auto open = protocol::kObservationOpen.size();
  return trim(text.substr(open, text.size() - open - protocol::kObservationClose.size()));
}

Outcome trace_fidelity() {
  Outcome o;
  struct Case {
    std::string name, trace;
    std::vector<std::string> kinds;
    int observations;
  };
  const std::vector<Case> cases = {
      {"crop", fixtures::crop_navigation_trace(), {"code", "code", "code", "answer"}, 3},
      {"geolocation", fixtures::geolocation_search_trace(), {"image_search", "text_search", "answer"}, 2},
      {"interleaved", fixtures::interleaved_trace(), {"code", "image_search", "text_search", "answer"}, 3},
  };
  for (const auto& c : cases) {
    auto turns = fixtures::split_trace(c.trace);
    o.expect(action_kinds(turns) == c.kinds, c.name + ": action sequence differs");
    int obs = 0;
    for (const auto& t : turns) obs += t.observation ? 1 : 0;
    o.expect(obs == c.observations, c.name + ": observation count differs");

    auto dir = fixtures::temp_dir("acc-trace");
    auto rig = fixtures::trace_rig(c.trace, dir);
    auto t = orchestrator::run_episode(rig.task, rig.episode, *rig.model, *rig.registry);
    o.expect(t.turns.size() == turns.size(), c.name + ": episode turn count differs");
    for (std::size_t i = 0; i < std::min(t.turns.size(), turns.size()); ++i) {
      o.expect(t.turns[i].seg == turns[i].seg, c.name + ": turn " + std::to_string(i + 1) + " differs");
      o.expect(t.turns[i].observation.has_value() == turns[i].observation.has_value(),
               c.name + ": observation presence differs at turn " + std::to_string(i + 1));
      if (t.turns[i].observation && turns[i].observation)
        o.expect(observation_body(*t.turns[i].observation) == *turns[i].observation,
                 c.name + ": observation text differs at turn " + std::to_string(i + 1));
    }
    o.expect(t.termination == orchestrator::Termination::Answered, c.name + ": not answered");
  }
  o.note = "3 traces parsed and re-run";
  return o;
}

// ---- orchestrator determinism ------------------------------------------------------------

Outcome orchestrator_determinism() {
  Outcome o;
  auto dir = fixtures::temp_dir("acc-determinism");
  auto desk = fixtures::write_desk_fixture(dir);
  const orchestrator::Task* task = nullptr;
  for (const auto& t : desk.task_list)
    if (t.id == desk.four_turn_task) task = &t;
  if (!task) {
    o.expect(false, "four-turn task missing from the desk fixture");
    return o;
  }

  auto rec_cfg = config::load_config(desk.config);
  auto rec_model = config::make_endpoint(rec_cfg, "model");
  auto rec_reg = config::make_registry(rec_cfg, config::make_transcript(rec_cfg, toolbox::TranscriptMode::Record));
  auto recorded = orchestrator::run_episode(*task, rec_cfg.episode, *rec_model, *rec_reg, 0);
  o.expect(recorded.turns.size() == 4, "recorded episode has " + std::to_string(recorded.turns.size()) + " turns");
  o.expect(recorded.mode == orchestrator::Mode::DeepResearch, "episode is not DeepResearch");

  const auto t0 = Clock::now();
  auto cfg = config::load_config(desk.config, {"transcript.mode=\"replay\""});
  std::vector<std::string> lines;
  for (int i = 0; i < 2; ++i) {
    auto model = config::make_endpoint(cfg, "model");
    auto reg = config::make_registry(cfg, config::make_transcript(cfg, toolbox::TranscriptMode::Replay), true);
    lines.push_back(orchestrator::trajectory_line(orchestrator::run_episode(*task, cfg.episode, *model, *reg, 0)));
  }
  const double dt = seconds_since(t0);
  o.expect(lines[0] == lines[1], "two replayed runs differ");
  o.expect(lines[0] == orchestrator::trajectory_line(recorded), "replayed run differs from the recording");
  o.expect(dt < 5.0, "runtime over 5 s");
  o.note = "4-turn episode, " + std::to_string(lines[0].size()) + " bytes, identical";
  return o;
}

// ---- curation ------------------------------------------------------------------------

Outcome curation_pipeline() {
  Outcome o;
  const auto t0 = Clock::now();
  auto root = fixtures::temp_dir("acc-curation");
  fixtures::InjectedDefects d;
  auto trajs = fixtures::curation_corpus(200, 2024, root, d);
  auto judge = fixtures::corpus_judge();
  auto vlm = fixtures::corpus_vlm_judge();
  curation::PipelineConfig cfg{judge.get(), vlm.get(), root};
  auto res = curation::run_pipeline(trajs, cfg);

  std::map<curation::Stage, std::set<std::string>> flagged;
  std::vector<orchestrator::Trajectory> passed;
  std::set<std::string> passed_ids;
  for (std::size_t i = 0; i < res.size(); ++i) {
    if (res[i].passed_all()) {
      passed.push_back(trajs[i]);
      passed_ids.insert(trajs[i].task.id);
    } else if (const auto* b = res[i].blocking()) {
      flagged[b->stage].insert(trajs[i].task.id);
    }
  }
  auto exact = [&](curation::Stage s, const std::set<std::string>& injected, const std::string& name) {
    const auto& got = flagged[s];
    std::size_t tp = 0;
    for (const auto& id : got) tp += injected.count(id);
    o.expect(tp == got.size() && tp == injected.size(),
             name + ": flagged " + std::to_string(got.size()) + ", injected " + std::to_string(injected.size()) +
                 ", overlap " + std::to_string(tp));
  };
  exact(curation::Stage::Format, d.format, "format");
  exact(curation::Stage::Answer, d.answer, "answer");
  exact(curation::Stage::Stepwise, d.blank_crop, "stepwise");
  exact(curation::Stage::LowQuality, d.sandbox_error, "low_quality");
  o.expect(flagged[curation::Stage::FinalConsistency].empty(), "final consistency flagged clean trajectories");
  o.expect(passed_ids == d.clean, "passing set differs from the clean set");

  auto stats = curation::export_sft(passed, {}, root, root / "sft.jsonl", root / "images", 7);
  std::set<std::string> exported;
  for (const auto& row : read_jsonl(root / "sft.jsonl")) exported.insert(row["meta"]["task_id"].get<std::string>());
  o.expect(exported == d.clean, "export is not exactly the clean records");
  o.expect(stats.skipped == 0, "export skipped records");
  const double dt = seconds_since(t0);
  o.expect(dt < 60.0, "runtime over 60 s");
  o.note = std::to_string(d.format.size()) + " format, " + std::to_string(d.answer.size()) + " answer, " +
           std::to_string(d.blank_crop.size()) + " blank-crop, " + std::to_string(d.sandbox_error.size()) +
           " sandbox-error; " + std::to_string(exported.size()) + " exported";
  return o;
}

// ---- planner -------------------------------------------------------------------------

Outcome planner_validation() {
  Outcome o;
  auto plan = planner::parse_plan(fixtures::reference_plan_json());
  auto g = planner::validate_plan(plan);
  o.expect(plan.steps.size() == 5, "reference plan does not have five steps");
  o.expect(g.edges == std::vector<std::pair<int, int>>{{2, 1}, {3, 2}, {4, 3}}, "reference plan edges differ");

  std::mt19937_64 rng(500);
  std::map<std::string, int> by_label;
  for (int i = 0; i < 500; ++i) {
    std::set<std::pair<int, int>> edges;
    auto m = fixtures::mutate_plan(fixtures::random_valid_plan(rng, edges), rng);
    by_label[m.label]++;
    try {
      planner::validate_plan(planner::parse_plan(m.text));
      o.expect(false, m.label + " accepted");
    } catch (const planner::PlanError& e) {
      o.expect(e.kind() == m.expected, m.label + " reported as " + std::string(planner::plan_error_str(e.kind())));
    }
  }
  for (const char* need : {"forward_reference", "unknown_tool", "missing_final_none", "too_many_steps"})
    o.expect(by_label[need] > 0, std::string("no ") + need + " mutation drawn");
  std::ostringstream note;
  note << "500 mutations:";
  for (const auto& [k, v] : by_label) note << " " << k << "=" << v;
  o.note = note.str();
  return o;
}

// ---- query generation ----------------------------------------------------------------

Outcome query_generation() {
  Outcome o;
  const auto t0 = Clock::now();
  auto pages = fixtures::toy_pages(50, 7);

  // Independent views of the raw pages: names per title and linked titles.
  static const std::regex link(R"(\[\[([^\]|#]+)[^\]]*\]\])");
  static const std::regex year(R"(\b(1[0-9]{3})\b)");
  std::map<std::string, std::set<std::string>> names_of, links_of;
  std::map<std::string, std::string> year_of;
  for (const auto& p : pages) {
    if (!p.redirect.empty()) {
      names_of[p.redirect].insert(to_lower(p.title));
      continue;
    }
    std::smatch m;
    if (std::regex_search(p.text, m, link) && starts_with(p.text, "#REDIRECT")) {
      names_of[m[1].str()].insert(to_lower(p.title));
      continue;
    }
    names_of[p.title].insert(to_lower(p.title));
    for (auto it = std::sregex_iterator(p.text.begin(), p.text.end(), link); it != std::sregex_iterator(); ++it)
      links_of[p.title].insert((*it)[1].str());
    if (std::regex_search(p.text, m, year)) year_of[p.title] = m[1].str();
  }

  auto g = querygen::build_graph(pages);
  querygen::OfflineWalkModel model;
  querygen::WalkEndpoints ep{&model, &model, &model, &model, &model};
  querygen::WalkConfig cfg;
  cfg.seed = 1000;
  auto seeds = querygen::sample_seed_nodes(g, 1000, 3);
  auto walks = querygen::run_walks(g, seeds, ep, cfg);
  o.expect(walks.size() == 1000, "expected 1000 walks");

  int accepted = 0, simplicity = 0, invariance = 0, leaks = 0;
  for (const auto& r : walks) {
    std::set<int> unique(r.path.begin(), r.path.end());
    bool simple = unique.size() == r.path.size();
    for (std::size_t k = 0; k + 1 < r.path.size(); ++k)
      simple = simple && links_of[g.nodes[r.path[k]].title].count(g.nodes[r.path[k + 1]].title) > 0;
    simplicity += simple ? 0 : 1;
    if (r.status != querygen::WalkStatus::Accepted) continue;
    ++accepted;
    if (trim(r.answer) != year_of[r.seed]) ++invariance;
    const auto q = to_lower(r.question);
    bool leak = q.find(to_lower(trim(r.answer))) != std::string::npos;
    for (std::size_t k = 0; k + 1 < r.path.size(); ++k)
      for (const auto& name : names_of[g.nodes[r.path[k]].title]) leak = leak || q.find(name) != std::string::npos;
    leaks += leak ? 1 : 0;
  }
  o.expect(simplicity == 0, std::to_string(simplicity) + " paths not simple");
  o.expect(invariance == 0, std::to_string(invariance) + " answers changed");
  o.expect(leaks == 0, std::to_string(leaks) + " questions leak an excluded name");
  o.expect(accepted > 0, "no walk was accepted");

  auto again = querygen::run_walks(g, seeds, ep, cfg);
  bool same = again.size() == walks.size();
  for (std::size_t i = 0; same && i < walks.size(); ++i)
    same = querygen::to_json(again[i], g) == querygen::to_json(walks[i], g);
  o.expect(same, "identical seeds gave different records");
  const double dt = seconds_since(t0);
  o.expect(dt < 30.0, "runtime over 30 s");
  o.note = "1000 walks, " + std::to_string(accepted) + " accepted";
  return o;
}

// ---- eval metrics --------------------------------------------------------------------

json scripted_reply(const std::string& content, double latency, int tokens) {
  return {{"content", content}, {"latency_s", latency}, {"completion_tokens", tokens}};
}

Outcome eval_metrics() {
  Outcome o;
  auto dir = fixtures::temp_dir("acc-eval");

  // A search-mode run with varying latencies and one failing query.
  json rules = json::array();
  std::vector<orchestrator::Task> tasks;
  for (int i = 0; i < 40; ++i) {
    orchestrator::Task t;
    t.id = "e" + std::to_string(i);
    t.question = "eval question " + std::to_string(i) + " ?";
    t.gold = "Oslo";
    tasks.push_back(t);
    json replies = json::array();
    const int hops = i % 3;
    for (int k = 0; k < hops; ++k)
      replies.push_back(scripted_reply(
          "<think>search</think><tool_call>" +
              json{{"name", "text_search"}, {"arguments", {{"queries", {"q" + std::to_string(k)}}}}}.dump() +
              "</tool_call>",
          0.1 + 0.013 * i, 7 + i));
    replies.push_back(scripted_reply("<think>done</think><answer>" + std::string(i % 4 ? "Oslo" : "Bergen") +
                                         "</answer>",
                                     0.2 + 0.007 * i, 3 + i % 5));
    if (i == 17) replies = json::array({json{{"error", "overloaded"}, {"status", 503}}});
    rules.push_back({{"contains", {t.question}}, {"replies", replies}});
  }
  llm::ScriptedChatEndpoint model(json{{"rules", rules}});
  llm::ScriptedChatEndpoint judge(json{{"rules", json::array()}, {"default", "DISAGREE"}});
  toolbox::ToolRegistry tools({}, std::make_shared<toolbox::FixtureProvider>(json::object()),
                              std::make_shared<toolbox::FixturePageFetcher>(json::object()), nullptr, nullptr);
  evalbench::VirtualClock clock;
  evalbench::BenchConfig bc;
  bc.mode = evalbench::EvalMode::Search;
  bc.out = dir / "records.jsonl";
  bc.episode.endpoint_retries = 0;
  bc.episode.workspace_root = dir / "ws";
  evalbench::run_benchmark(tasks, bc, model, tools, &judge, clock);
  auto m = evalbench::compute_metrics(evalbench::read_records(bc.out));

  // Independent fold straight over the JSON lines.
  double wall = 0, model_t = 0, tool_t = 0, tokens = 0, turns = 0;
  int n = 0, errors = 0, judged = 0, correct = 0;
  for (const auto& line : split_lines(read_file(bc.out))) {
    if (is_blank(line)) continue;
    auto j = json::parse(line);
    if (!j["error"].get<std::string>().empty()) {
      ++errors;
      continue;
    }
    ++n;
    wall += j["end_s"].get<double>() - j["start_s"].get<double>();
    model_t += j["model_time_s"].get<double>();
    tool_t += j["tool_time_s"].get<double>();
    tokens += j["total_tokens"].get<double>();
    turns += j["turns"].get<double>();
    if (j["correct"].is_boolean()) {
      ++judged;
      correct += j["correct"].get<bool>() ? 1 : 0;
    }
  }
  auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-9; };
  o.expect(static_cast<int>(m.n) == n && static_cast<int>(m.n_errors) == errors && errors == 1, "record counts differ");
  o.expect(close(m.tps, tokens / wall), "TPS differs from the independent fold");
  o.expect(close(m.model_tps, tokens / model_t), "model TPS differs");
  o.expect(close(m.mean_wall_s, wall / n), "mean wall time differs");
  o.expect(close(m.mean_model_s, model_t / n) && close(m.mean_tool_s, tool_t / n), "mean model/tool time differs");
  o.expect(close(m.mean_tokens, tokens / n) && close(m.mean_turns, turns / n), "mean tokens/turns differ");
  o.expect(m.accuracy && close(*m.accuracy, static_cast<double>(correct) / judged), "accuracy differs");

  // Tool time sits in the TPS denominator.
  o.expect(close(wall, model_t + tool_t), "wall time is not model plus tool time");
  o.expect(tool_t > 0 && m.tps < m.model_tps, "tool time did not lower TPS");
  evalbench::EvalRecord a, b;
  a.id = "a", a.end_s = 4.0, a.model_time_s = 3.0, a.tool_time_s = 1.0, a.total_tokens = 100;
  b.id = "b", b.end_s = 6.0, b.model_time_s = 2.0, b.tool_time_s = 4.0, b.total_tokens = 50;
  auto tm = evalbench::compute_metrics({a, b});
  o.expect(close(tm.tps, 150.0 / 10.0) && close(tm.model_tps, 150.0 / 5.0), "worked TPS example differs");

  // Seeded 10% subsample of 1800 items.
  std::vector<json> rows;
  for (int i = 0; i < 1800; ++i) rows.push_back({{"id", "item" + std::to_string(i)}, {"question", "q" + std::to_string(i)}});
  write_jsonl(dir / "big.jsonl", rows);
  auto big = evalbench::load_dataset(dir / "big.jsonl");
  auto s1 = evalbench::sample_indices(big.size(), 0.1, 42), s2 = evalbench::sample_indices(big.size(), 0.1, 42);
  o.expect(s1.size() == 180, "subsample has " + std::to_string(s1.size()) + " ids");
  o.expect(s1 == s2, "subsample differs between runs");
  llm::ScriptedChatEndpoint direct(json{{"rules", json::array()},
                                        {"default", scripted_reply("<think>k</think><answer>x</answer>", 0.1, 2)}});
  evalbench::BenchConfig dc;
  dc.sample_fraction = 0.1;
  dc.seed = 42;
  dc.episode.workspace_root = dir / "ws";
  evalbench::VirtualClock c2;
  auto recs = evalbench::run_benchmark(big, dc, direct, tools, nullptr, c2);
  std::set<std::string> ids;
  for (const auto& r : recs) ids.insert(r.id);
  std::set<std::string> expected;
  for (auto i : s1) expected.insert(big[i].id);
  o.expect(ids == expected, "benchmark ran a different subsample");
  o.note = std::to_string(n) + " records folded, TPS " + std::to_string(m.tps) + " vs model-only " +
           std::to_string(m.model_tps) + "; 180 of 1800 sampled";
  return o;
}

// ---- desk run ------------------------------------------------------------------------

Outcome desk_run() {
  Outcome o;
  const auto t0 = Clock::now();
  auto dir = fixtures::temp_dir("acc-desk");
  auto desk = fixtures::write_desk_fixture(dir);
  const auto c = desk.config.string();
  auto p = [&](const char* name) { return (dir / name).string(); };
  auto step = [&](const std::string& name, std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", c, "--log-level", "warn"});
    const int code = cli::run(args);
    o.expect(code == cli::kOk, name + " exited with " + std::to_string(code));
    return code == cli::kOk;
  };
  if (!step("generate", {"generate", "--tasks", desk.tasks.string(), "--out", p("traj.jsonl")})) return o;
  if (!step("curate", {"curate", "--trajectories", p("traj.jsonl"), "--out", p("curated_sft.jsonl"), "--passed",
                       p("passed.jsonl")}))
    return o;
  if (!step("plan", {"plan", "--trajectories", p("passed.jsonl"), "--out", p("plans.jsonl")})) return o;
  if (!step("export", {"export", "--trajectories", p("passed.jsonl"), "--plans", p("plans.jsonl"), "--out",
                       p("sft.jsonl")}))
    return o;

  std::map<std::string, int> per_tag;
  for (const auto& row : read_jsonl(p("sft.jsonl"))) per_tag[row["mix"].get<std::string>()]++;
  for (auto tag : {curation::MixTag::ThinkImage, curation::MixTag::Search, curation::MixTag::Interleaved,
                   curation::MixTag::Planner, curation::MixTag::GeneralVqa})
    o.expect(per_tag[std::string(curation::mix_tag_str(tag))] >= 1,
             "no exported record tagged " + std::string(curation::mix_tag_str(tag)));

  if (!step("replay", {"replay", "--trajectories", p("traj.jsonl"), "--out", p("replayed.jsonl")})) return o;
  const auto original = read_file(p("traj.jsonl")), replayed = read_file(p("replayed.jsonl"));
  o.expect(!original.empty() && original == replayed, "replayed trajectories differ from the generated ones");
  const double dt = seconds_since(t0);
  o.expect(dt < 120.0, "runtime over 2 min");
  std::ostringstream note;
  note << read_jsonl(p("traj.jsonl")).size() << " trajectories; export:";
  for (const auto& [k, v] : per_tag) note << " " << k << "=" << v;
  o.note = note.str();
  return o;
}

}  // namespace

int main() {
  set_log_level(LogLevel::Error);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"protocol round-trip", protocol_round_trip},
      {"trace fidelity", trace_fidelity},
      {"orchestrator determinism", orchestrator_determinism},
      {"curation pipeline", curation_pipeline},
      {"planner", planner_validation},
      {"query generation", query_generation},
      {"eval metrics", eval_metrics},
      {"end-to-end desk run", desk_run},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.ok = false;
      o.problems.push_back(std::string("exception: ") + e.what());
    }
    char secs[32];
    std::snprintf(secs, sizeof(secs), "%.2f s", seconds_since(t0));
    std::cout << (o.ok ? "PASS " : "FAIL ") << name << " [" << secs << "]";
    if (!o.note.empty()) std::cout << " " << o.note;
    std::cout << "\n";
    for (const auto& p : o.problems) std::cout << "    " << p << "\n";
    failed += o.ok ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << "\n";
  return failed ? 1 : 0;
}
