#include "mmagent/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "mmagent/judge.hpp"

namespace mmagent::evalbench {

using orchestrator::Termination;

double SteadyClock::now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string_view eval_mode_str(EvalMode m) { return m == EvalMode::Direct ? "direct" : "search"; }

EvalMode eval_mode_from_str(std::string_view s) {
  if (s == "direct") return EvalMode::Direct;
  if (s == "search" || s == "deep_research") return EvalMode::Search;
  throw ConfigError("unknown eval mode: " + std::string(s));
}

orchestrator::Mode episode_mode(EvalMode m) {
  return m == EvalMode::Direct ? orchestrator::Mode::Direct : orchestrator::Mode::DeepResearch;
}

bool EvalRecord::has_flag(std::string_view f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }

json to_json(const EvalRecord& r) {
  json j = {{"id", r.id},
            {"mode", eval_mode_str(r.mode)},
            {"start_s", r.start_s},
            {"end_s", r.end_s},
            {"wall_time_s", r.wall_time_s()},
            {"model_time_s", r.model_time_s},
            {"tool_time_s", r.tool_time_s},
            {"turns", r.turns},
            {"answer_tokens", r.answer_tokens},
            {"total_tokens", r.total_tokens},
            {"termination", r.termination},
            {"error", r.error},
            {"flags", r.flags}};
  j["final_answer"] = r.final_answer ? json(*r.final_answer) : json(nullptr);
  j["correct"] = r.correct ? json(*r.correct) : json(nullptr);
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  EvalRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.mode = eval_mode_from_str(j.at("mode").get<std::string>());
    r.start_s = j.at("start_s").get<double>();
    r.end_s = j.at("end_s").get<double>();
    r.model_time_s = j.value("model_time_s", 0.0);
    r.tool_time_s = j.value("tool_time_s", 0.0);
    r.turns = j.value("turns", 0);
    r.answer_tokens = j.value("answer_tokens", 0);
    r.total_tokens = j.value("total_tokens", 0);
    if (j.contains("final_answer") && j["final_answer"].is_string()) r.final_answer = j["final_answer"].get<std::string>();
    if (j.contains("correct") && j["correct"].is_boolean()) r.correct = j["correct"].get<bool>();
    r.termination = j.value("termination", "");
    r.error = j.value("error", "");
    r.flags = j.value("flags", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw DataError(std::string("bad eval record: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("bad eval record: ") + e.what());
  }
  return r;
}

std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
  std::vector<EvalRecord> out;
  for (const auto& row : read_jsonl(path)) out.push_back(eval_record_from_json(row));
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("sample fraction must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  fisher_yates(std::span(idx), rng);
  idx.resize(std::min(k, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<orchestrator::Task> load_dataset(const std::filesystem::path& path) {
  std::vector<orchestrator::Task> out;
  std::set<std::string> ids;
  for (const auto& row : read_jsonl(path)) {
    auto t = orchestrator::task_from_json(row);
    if (!ids.insert(t.id).second) throw DataError("duplicate task id in dataset: " + t.id);
    out.push_back(std::move(t));
  }
  return out;
}

EvalRecord make_record(const orchestrator::Trajectory& t, EvalMode mode, double start_s, double end_s,
                       llm::ChatEndpoint* judge) {
  EvalRecord r;
  r.id = t.task.id;
  r.mode = mode;
  r.start_s = start_s;
  r.end_s = end_s;
  r.model_time_s = t.model_time_s();
  r.tool_time_s = t.tool_time_s();
  const auto hist = t.history();
  r.turns = static_cast<int>(hist.size());
  r.total_tokens = t.total_tokens();
  if (!hist.empty() && hist.back()->seg.answer()) r.answer_tokens = hist.back()->completion_tokens;
  r.final_answer = t.final_answer;
  r.termination = std::string(orchestrator::termination_str(t.termination));
  if (t.termination == Termination::ModelError || t.termination == Termination::ToolFailure)
    r.error = t.error.empty() ? r.termination : t.error;
  bool capped = t.termination == Termination::TokenBudget, estimated = false;
  for (const auto& turn : t.turns) {
    capped = capped || turn.finish_reason == "length";
    estimated = estimated || turn.tokens_estimated;
  }
  if (capped) r.flags.push_back("max-length");
  if (estimated) r.flags.push_back("token-estimate");
  if (!r.is_error() && t.task.gold && t.final_answer) {
    auto v = judge::judge_answer(t.task.question, *t.task.gold, *t.final_answer, judge);
    if (v.verdict != judge::Verdict::Pending) r.correct = v.verdict == judge::Verdict::Positive;
  } else if (!r.is_error() && t.task.gold) {
    r.correct = false;
  }
  return r;
}

std::vector<EvalRecord> run_benchmark(const std::vector<orchestrator::Task>& tasks, const BenchConfig& cfg,
                                      llm::ChatEndpoint& model, toolbox::ToolRegistry& tools, llm::ChatEndpoint* judge,
                                      Clock& clock) {
  std::vector<std::size_t> chosen;
  if (cfg.sample_fraction) {
    chosen = sample_indices(tasks.size(), *cfg.sample_fraction, cfg.seed);
  } else {
    chosen.resize(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) chosen[i] = i;
  }

  std::map<std::string, EvalRecord> done;
  if (cfg.resume && !cfg.out.empty() && std::filesystem::exists(cfg.out)) {
    std::vector<std::size_t> bad;
    for (const auto& row : read_jsonl(cfg.out, &bad)) {
      auto r = eval_record_from_json(row);
      if (r.mode == cfg.mode) done[r.id] = std::move(r);
    }
    for (auto n : bad) log_warn("eval records: ignoring bad line " + std::to_string(n));
  }

  auto ep = cfg.episode;
  ep.mode = episode_mode(cfg.mode);
  std::vector<EvalRecord> out;
  out.reserve(chosen.size());
  for (auto i : chosen) {
    const auto& task = tasks[i];
    if (auto it = done.find(task.id); it != done.end()) {
      out.push_back(it->second);
      continue;
    }
    auto task_run = task;
    task_run.mode.reset();
    const double start = clock.now();
    auto traj = orchestrator::run_episode(task_run, ep, model, tools, 0);
    clock.advance(traj.model_time_s() + traj.tool_time_s());
    const double end = clock.now();
    auto rec = make_record(traj, cfg.mode, start, end, judge);
    if (!cfg.out.empty()) append_jsonl(cfg.out, to_json(rec));
    out.push_back(std::move(rec));
  }
  return out;
}

Metrics compute_metrics(const std::vector<EvalRecord>& records) {
  Metrics m;
  double wall = 0, model = 0, tool = 0, tokens = 0, answer = 0, turns = 0;
  std::size_t correct = 0;
  for (const auto& r : records) {
    if (r.is_error()) {
      ++m.n_errors;
      continue;
    }
    ++m.n;
    wall += r.wall_time_s();
    model += r.model_time_s;
    tool += r.tool_time_s;
    tokens += r.total_tokens;
    answer += r.answer_tokens;
    turns += r.turns;
    if (r.correct) {
      ++m.n_judged;
      correct += *r.correct ? 1 : 0;
    }
    if (r.has_flag("max-length")) ++m.n_max_length;
    if (r.has_flag("token-estimate")) m.tokens_estimated = true;
  }
  if (m.n == 0) throw EmptyMetrics("no non-error records to average (" + std::to_string(m.n_errors) + " errors)");
  const double n = static_cast<double>(m.n);
  m.mean_wall_s = wall / n;
  m.mean_model_s = model / n;
  m.mean_tool_s = tool / n;
  m.mean_tokens = tokens / n;
  m.mean_answer_tokens = answer / n;
  m.mean_turns = turns / n;
  m.tps = wall > 0 ? tokens / wall : 0.0;
  m.model_tps = model > 0 ? tokens / model : 0.0;
  if (m.n_judged > 0) m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n_judged);
  return m;
}

namespace {

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

}  // namespace

std::string metrics_table(const Metrics& m, const std::string& label) {
  std::string out = label + "\n";
  auto row = [&](const std::string& k, const std::string& v) {
    std::string key = "  " + k;
    key.resize(std::max<std::size_t>(key.size(), 24), ' ');
    out += key + v + "\n";
  };
  row("samples", std::to_string(m.n) + (m.n_errors ? " (+" + std::to_string(m.n_errors) + " errors)" : ""));
  row("mean wall time (s)", fmt(m.mean_wall_s));
  row("  model time (s)", fmt(m.mean_model_s));
  row("  tool time (s)", fmt(m.mean_tool_s));
  row("mean tokens", fmt(m.mean_tokens, 1) + (m.tokens_estimated ? " (estimated)" : ""));
  row("mean answer tokens", fmt(m.mean_answer_tokens, 1));
  row("tokens per second", fmt(m.tps, 2));
  row("model-only TPS", fmt(m.model_tps, 2));
  row("mean turns", fmt(m.mean_turns, 2));
  row("accuracy", m.accuracy ? fmt(*m.accuracy * 100.0, 1) + "% of " + std::to_string(m.n_judged) : "n/a");
  if (m.n_max_length) row("hit max length", std::to_string(m.n_max_length));
  return out;
}

std::string metrics_csv_header() {
  return "label,n,n_errors,mean_wall_s,mean_model_s,mean_tool_s,mean_tokens,mean_answer_tokens,tps,model_tps,"
         "mean_turns,accuracy,n_judged,n_max_length,tokens_estimated\n";
}

std::string metrics_csv_row(const Metrics& m, const std::string& label) {
  return label + "," + std::to_string(m.n) + "," + std::to_string(m.n_errors) + "," + fmt(m.mean_wall_s, 6) + "," +
         fmt(m.mean_model_s, 6) + "," + fmt(m.mean_tool_s, 6) + "," + fmt(m.mean_tokens, 6) + "," +
         fmt(m.mean_answer_tokens, 6) + "," + fmt(m.tps, 6) + "," + fmt(m.model_tps, 6) + "," + fmt(m.mean_turns, 6) +
         "," + (m.accuracy ? fmt(*m.accuracy, 6) : "") + "," + std::to_string(m.n_judged) + "," +
         std::to_string(m.n_max_length) + "," + (m.tokens_estimated ? "1" : "0") + "\n";
}

}  // namespace mmagent::evalbench
