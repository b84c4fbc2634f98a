#include "mmagent/curation.hpp"

#include <omp.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "mmagent/judge.hpp"
#include "mmagent/prompts.hpp"

namespace mmagent::curation {

namespace fs = std::filesystem;
using orchestrator::Termination;
using orchestrator::Turn;
using protocol::ToolName;

std::string_view stage_str(Stage s) {
  switch (s) {
    case Stage::Format: return "format";
    case Stage::Answer: return "answer";
    case Stage::FinalConsistency: return "final_consistency";
    case Stage::Stepwise: return "stepwise_consistency";
    case Stage::LowQuality: return "low_quality";
  }
  return "format";
}

Stage stage_from_str(std::string_view s) {
  for (auto st : kStages)
    if (stage_str(st) == s) return st;
  throw DataError("unknown stage: " + std::string(s));
}

std::string_view status_str(Status s) {
  switch (s) {
    case Status::Pass: return "pass";
    case Status::Fail: return "fail";
    case Status::Pending: return "pending";
  }
  return "pending";
}

Status status_from_str(std::string_view s) {
  if (s == "pass") return Status::Pass;
  if (s == "fail") return Status::Fail;
  if (s == "pending") return Status::Pending;
  throw DataError("unknown verdict status: " + std::string(s));
}

json to_json(const FilterVerdict& v) {
  json j = {{"stage", stage_str(v.stage)},
            {"status", status_str(v.status)},
            {"reason", v.reason},
            {"steps", v.steps},
            {"pipeline_version", v.pipeline_version}};
  j["judge_raw"] = v.judge_raw ? json(*v.judge_raw) : json(nullptr);
  return j;
}

FilterVerdict verdict_from_json(const json& j) {
  FilterVerdict v;
  try {
    v.stage = stage_from_str(j.at("stage").get<std::string>());
    v.status = status_from_str(j.at("status").get<std::string>());
    v.reason = j.value("reason", "");
    if (j.contains("judge_raw") && j["judge_raw"].is_string()) v.judge_raw = j["judge_raw"].get<std::string>();
    v.steps = j.value("steps", std::vector<int>{});
    v.pipeline_version = j.value("pipeline_version", "");
  } catch (const json::exception& e) {
    throw DataError(std::string("bad verdict record: ") + e.what());
  }
  return v;
}

namespace {

FilterVerdict make(Stage stage, Status status, std::string reason) {
  FilterVerdict v;
  v.stage = stage;
  v.status = status;
  v.reason = std::move(reason);
  v.pipeline_version = prompts::pipeline_version();
  return v;
}

Status from_judge(judge::Verdict v) {
  switch (v) {
    case judge::Verdict::Positive: return Status::Pass;
    case judge::Verdict::Negative: return Status::Fail;
    case judge::Verdict::Pending: return Status::Pending;
  }
  return Status::Pending;
}

const Turn* last_history_turn(const Trajectory& t) {
  for (auto it = t.turns.rbegin(); it != t.turns.rend(); ++it)
    if (!it->discarded) return &*it;
  return nullptr;
}

}  // namespace

FilterVerdict format_filter(const Trajectory& t) {
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    if (const auto* m = std::get_if<protocol::Malformed>(&t.turns[i].seg.action))
      return make(Stage::Format, Status::Fail,
                  "malformed turn " + std::to_string(i) + ": " + std::string(protocol::malformed_reason_str(m->reason)));
  }
  auto hist = t.history();
  for (std::size_t i = 0; i + 1 < hist.size(); ++i)
    if (hist[i]->seg.answer()) return make(Stage::Format, Status::Fail, "answer before the last turn");
  if (t.termination != Termination::Answered || hist.empty() || !hist.back()->seg.answer())
    return make(Stage::Format, Status::Fail, "no terminal answer tag");
  return make(Stage::Format, Status::Pass, "");
}

FilterVerdict answer_filter(const Trajectory& t, const std::optional<std::string>& gold, llm::ChatEndpoint* judge) {
  if (!gold) return make(Stage::Answer, Status::Fail, "no gold answer");
  if (!t.final_answer) return make(Stage::Answer, Status::Fail, "no final answer");
  auto r = judge::judge_answer(t.task.question, *gold, *t.final_answer, judge);
  auto status = from_judge(r.verdict);
  auto v = make(Stage::Answer, status,
                status == Status::Pass      ? ""
                : status == Status::Fail    ? "final answer disagrees with gold"
                                            : "judge unavailable");
  if (!r.fast_path) v.judge_raw = r.raw;
  return v;
}

FilterVerdict final_consistency_check(const Trajectory& t, llm::ChatEndpoint* judge) {
  const Turn* last = last_history_turn(t);
  if (!last || !t.final_answer) return make(Stage::FinalConsistency, Status::Fail, "no final answer");
  if (is_blank(last->seg.think)) return make(Stage::FinalConsistency, Status::Fail, "no reasoning to compare");
  auto r = judge::judge_consistency(last->seg.think, *t.final_answer, judge);
  auto status = from_judge(r.verdict);
  auto v = make(Stage::FinalConsistency, status,
                status == Status::Pass      ? ""
                : status == Status::Fail    ? "final answer inconsistent with the last reasoning"
                                            : "judge unavailable");
  v.judge_raw = r.raw;
  return v;
}

FilterVerdict stepwise_consistency_check(const Trajectory& t, llm::ChatEndpoint* vlm_judge,
                                         const fs::path& workspace_root) {
  auto hist = t.history();
  const auto ws = t.workspace(workspace_root);
  std::vector<int> bad;
  std::string raw;
  bool pending = false;
  int checked = 0;
  for (std::size_t i = 0; i + 1 < hist.size(); ++i) {
    const auto& obs = hist[i]->observation;
    if (!obs) continue;
    const auto* code = obs->code();
    if (!code || code->produced_images.empty()) continue;
    const auto& think = hist[i + 1]->seg.think;
    for (const auto& rel : code->produced_images) {
      ++checked;
      auto r = judge::judge_step((ws / rel).string(), static_cast<int>(i + 1), think, vlm_judge);
      if (!raw.empty()) raw += "\n";
      raw += "step " + std::to_string(i + 1) + ": " + r.raw;
      if (r.verdict == judge::Verdict::Negative) {
        if (bad.empty() || bad.back() != static_cast<int>(i + 1)) bad.push_back(static_cast<int>(i + 1));
      } else if (r.verdict == judge::Verdict::Pending) {
        pending = true;
      }
    }
  }
  if (checked == 0) return make(Stage::Stepwise, Status::Pass, "");
  FilterVerdict v;
  if (!bad.empty()) {
    std::string steps;
    for (int s : bad) steps += (steps.empty() ? "" : ", ") + std::to_string(s);
    v = make(Stage::Stepwise, Status::Fail, "image contradicts the following reasoning at step " + steps);
    v.steps = bad;
  } else if (pending) {
    v = make(Stage::Stepwise, Status::Pending, "judge unavailable");
  } else {
    v = make(Stage::Stepwise, Status::Pass, "");
  }
  v.judge_raw = raw;
  return v;
}

// ---- classification --------------------------------------------------------------

std::string_view function_tag_str(FunctionTag t) {
  switch (t) {
    case FunctionTag::ErrorOps: return "error_ops";
    case FunctionTag::SingleRound: return "single_round";
    case FunctionTag::ReCrop: return "re_crop";
    case FunctionTag::ZoomIn: return "zoom_in";
    case FunctionTag::Navigation: return "navigation";
    case FunctionTag::ContrastOrOther: return "contrast_or_other";
  }
  return "";
}

bool mentions_correction(std::string_view think) {
  for (std::string_view m : {"offset", "adjust", "re-crop", "recrop", "shift"})
    if (contains_ci(think, m)) return true;
  return false;
}

FunctionTags classify_functions(const Trajectory& t) {
  using code_ops::OpKind;
  FunctionTags out;
  auto hist = t.history();
  struct CodeTurn {
    std::size_t index;
    std::vector<OpKind> ops;
    std::optional<std::string> source;
  };
  std::vector<CodeTurn> code_turns;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    const auto* call = hist[i]->seg.tool_call();
    if (!call) continue;
    out.tool_counts[std::string(protocol::tool_name_str(call->name))]++;
    if (call->name != ToolName::Code) continue;
    auto ops = code_ops::detect_operations(call->code);
    for (auto op : ops) out.op_counts[op]++;
    code_turns.push_back({i, ops, code_ops::source_image(call->code)});
    if (hist[i]->observation) {
      if (const auto* c = hist[i]->observation->code(); c && c->exit_status != 0) out.tags.insert(FunctionTag::ErrorOps);
    }
  }
  if (code_turns.size() == 1) out.tags.insert(FunctionTag::SingleRound);

  std::size_t crops = 0;
  bool re_crop = false;
  for (std::size_t a = 0; a < code_turns.size(); ++a) {
    const auto& ct = code_turns[a];
    if (!code_ops::has_op(ct.ops, OpKind::Crop)) continue;
    ++crops;
    if (ct.index + 1 >= hist.size() || !mentions_correction(hist[ct.index + 1]->seg.think)) continue;
    for (std::size_t b = a + 1; b < code_turns.size(); ++b)
      if (code_ops::has_op(code_turns[b].ops, OpKind::Crop) && code_turns[b].source == ct.source) re_crop = true;
  }
  if (re_crop) out.tags.insert(FunctionTag::ReCrop);
  else if (crops >= 2) out.tags.insert(FunctionTag::Navigation);

  for (const auto& ct : code_turns) {
    if (code_ops::has_op(ct.ops, OpKind::ZoomIn)) out.tags.insert(FunctionTag::ZoomIn);
    for (auto op : ct.ops)
      if (op != OpKind::Crop && op != OpKind::Resize && op != OpKind::ZoomIn)
        out.tags.insert(FunctionTag::ContrastOrOther);
  }
  return out;
}

FilterVerdict low_quality_check(const FunctionTags& tags) {
  if (tags.has(FunctionTag::ErrorOps)) return make(Stage::LowQuality, Status::Fail, "sandbox execution error");
  if (tags.has(FunctionTag::ReCrop)) return make(Stage::LowQuality, Status::Fail, "re-cropping");
  return make(Stage::LowQuality, Status::Pass, "");
}

std::vector<std::size_t> remove_low_quality(const std::vector<FunctionTags>& tags) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (!tags[i].has(FunctionTag::ErrorOps) && !tags[i].has(FunctionTag::ReCrop)) keep.push_back(i);
  return keep;
}

// ---- pipeline ----------------------------------------------------------------------

std::string trajectory_key(const Trajectory& t) { return t.task.id + "#" + std::to_string(t.rollout); }

bool CurationResult::passed_all() const {
  if (verdicts.size() != std::size(kStages)) return false;
  return std::all_of(verdicts.begin(), verdicts.end(), [](const FilterVerdict& v) { return v.pass(); });
}

const FilterVerdict* CurationResult::blocking() const {
  for (const auto& v : verdicts)
    if (!v.pass()) return &v;
  return nullptr;
}

CurationResult curate_one(const Trajectory& t, const PipelineConfig& cfg, const std::vector<FilterVerdict>* prior) {
  CurationResult res;
  res.key = trajectory_key(t);
  res.tags = classify_functions(t);
  const auto& version = prompts::pipeline_version();
  for (auto stage : kStages) {
    const FilterVerdict* reuse = nullptr;
    if (prior) {
      for (auto it = prior->rbegin(); it != prior->rend(); ++it)
        if (it->stage == stage && it->pipeline_version == version && it->status != Status::Pending) {
          reuse = &*it;
          break;
        }
    }
    FilterVerdict v;
    if (reuse) {
      v = *reuse;
    } else {
      switch (stage) {
        case Stage::Format: v = format_filter(t); break;
        case Stage::Answer: v = answer_filter(t, t.task.gold, cfg.judge); break;
        case Stage::FinalConsistency: v = final_consistency_check(t, cfg.judge); break;
        case Stage::Stepwise: v = stepwise_consistency_check(t, cfg.vlm_judge, cfg.workspace_root); break;
        case Stage::LowQuality: v = low_quality_check(res.tags); break;
      }
    }
    res.verdicts.push_back(std::move(v));
    if (!res.verdicts.back().pass()) break;
  }
  return res;
}

std::vector<CurationResult> run_pipeline_serial(const std::vector<Trajectory>& trajs, const PipelineConfig& cfg,
                                                const PriorVerdicts* prior) {
  std::vector<CurationResult> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) {
    const std::vector<FilterVerdict>* p = nullptr;
    if (prior)
      if (auto it = prior->find(trajectory_key(t)); it != prior->end()) p = &it->second;
    out.push_back(curate_one(t, cfg, p));
  }
  return out;
}

std::vector<CurationResult> run_pipeline(const std::vector<Trajectory>& trajs, const PipelineConfig& cfg,
                                         const PriorVerdicts* prior) {
  std::vector<CurationResult> out(trajs.size());
  const auto n = static_cast<std::int64_t>(trajs.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& t = trajs[static_cast<std::size_t>(i)];
    const std::vector<FilterVerdict>* p = nullptr;
    if (prior)
      if (auto it = prior->find(trajectory_key(t)); it != prior->end()) p = &it->second;
    out[static_cast<std::size_t>(i)] = curate_one(t, cfg, p);
  }
  return out;
}

PriorVerdicts load_verdicts(const fs::path& path) {
  PriorVerdicts out;
  if (!fs::exists(path)) return out;
  std::vector<std::size_t> bad;
  for (const auto& row : read_jsonl(path, &bad)) {
    try {
      out[row.at("key").get<std::string>()].push_back(verdict_from_json(row));
    } catch (const std::exception& e) {
      log_warn(std::string("verdict store: skipping record: ") + e.what());
    }
  }
  for (auto n : bad) log_warn("verdict store " + path.string() + ": bad line " + std::to_string(n));
  return out;
}

void append_verdicts(const fs::path& path, const std::vector<CurationResult>& results) {
  std::string buf;
  for (const auto& r : results) {
    for (const auto& v : r.verdicts) {
      json j = to_json(v);
      j["key"] = r.key;
      buf += dump_json(j);
      buf += '\n';
    }
  }
  if (buf.empty()) return;
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::app | std::ios::binary);
  if (!f) throw DataError("cannot open verdict store: " + path.string());
  f << buf;
}

std::string distribution_csv(const std::vector<FunctionTags>& tags) {
  std::map<code_ops::OpKind, int> totals;
  for (const auto& t : tags)
    for (const auto& [op, n] : t.op_counts) totals[op] += n;
  std::string out = "operation,count\n";
  for (const auto& [op, n] : totals) out += std::string(code_ops::op_kind_str(op)) + "," + std::to_string(n) + "\n";
  return out;
}

// ---- SFT export ----------------------------------------------------------------------

std::string_view mix_tag_str(MixTag t) {
  switch (t) {
    case MixTag::ThinkImage: return "think_image";
    case MixTag::Search: return "search";
    case MixTag::Interleaved: return "interleaved";
    case MixTag::Planner: return "planner";
    case MixTag::GeneralVqa: return "general_vqa";
  }
  return "";
}

MixTag mix_tag_for(const Trajectory& t) {
  if (t.mode == orchestrator::Mode::Plan) return MixTag::Planner;
  bool code = false, search = false;
  for (const auto* turn : t.history()) {
    if (const auto* call = turn->seg.tool_call()) (call->name == ToolName::Code ? code : search) = true;
  }
  if (code && search) return MixTag::Interleaved;
  if (code) return MixTag::ThinkImage;
  if (search) return MixTag::Search;
  return MixTag::GeneralVqa;
}

json to_json(const SftRecord& r) {
  return {{"system", r.system}, {"messages", r.messages}, {"images", r.images}, {"meta", r.meta},
          {"mix", mix_tag_str(r.tag)}};
}

namespace {

struct Packager {
  fs::path images_dir;
  std::string prefix;  // package-relative directory for this record
  std::vector<std::pair<fs::path, std::string>> copies;
  std::vector<std::string> images;

  // Returns the package-relative path, or nullopt when the source is missing.
  std::optional<std::string> add(const fs::path& src, const std::string& name) {
    std::error_code ec;
    if (!fs::is_regular_file(src, ec)) return std::nullopt;
    std::string rel = prefix + "/" + name;
    copies.emplace_back(src, rel);
    images.push_back(rel);
    return rel;
  }

  void commit() const {
    for (const auto& [src, rel] : copies) {
      auto dst = images_dir / rel;
      fs::create_directories(dst.parent_path());
      fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
    }
  }
};

std::string safe_component(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out.empty() ? "_" : out;
}

json user_message(const orchestrator::Task& task, Packager& pk, bool& ok) {
  json msg = {{"role", "user"}};
  std::string content = task.question;
  auto names = orchestrator::staged_image_names(task);
  json imgs = json::array();
  if (!names.empty()) content += "\n\nImage paths:";
  for (std::size_t i = 0; i < names.size(); ++i) {
    content += "\n" + names[i];
    auto rel = pk.add(task.images[i], names[i]);
    if (!rel) {
      log_warn("export: skipping " + task.id + ": missing image " + task.images[i]);
      ok = false;
      return msg;
    }
    imgs.push_back(*rel);
  }
  msg["content"] = content;
  msg["images"] = imgs;
  return msg;
}

std::optional<SftRecord> trajectory_record(const Trajectory& t, const fs::path& workspace_root,
                                           const fs::path& images_dir) {
  SftRecord rec;
  rec.tag = mix_tag_for(t);
  Packager pk{images_dir, safe_component(t.task.id) + "/r" + std::to_string(t.rollout), {}, {}};
  bool ok = true;
  rec.messages = json::array();
  rec.messages.push_back(user_message(t.task, pk, ok));
  if (!ok) return std::nullopt;
  if (rec.tag == MixTag::GeneralVqa) {
    rec.system = prompts::general_nonthink_prompt();
    rec.messages.push_back({{"role", "assistant"}, {"content", t.final_answer.value_or("")}});
  } else {
    rec.system = orchestrator::build_system_prompt(t.mode);
    const auto ws = t.workspace(workspace_root);
    for (const auto* turn : t.history()) {
      rec.messages.push_back({{"role", "assistant"}, {"content", turn->seg.raw}});
      if (!turn->observation) continue;
      json obs = {{"role", "observation"}, {"content", protocol::render_observation(*turn->observation)}};
      json imgs = json::array();
      if (const auto* c = turn->observation->code()) {
        for (const auto& rel : c->produced_images) {
          auto packaged = pk.add(ws / rel, "produced/" + rel);
          if (!packaged) {
            log_warn("export: skipping " + trajectory_key(t) + ": missing produced image " + rel);
            return std::nullopt;
          }
          imgs.push_back(*packaged);
        }
      }
      obs["images"] = imgs;
      rec.messages.push_back(std::move(obs));
    }
  }
  rec.images = pk.images;
  rec.meta = {{"task_id", t.task.id}, {"rollout", t.rollout}, {"source", t.task.source},
              {"mode", orchestrator::mode_str(t.mode)}, {"pipeline_version", prompts::pipeline_version()}};
  pk.commit();
  return rec;
}

std::optional<SftRecord> plan_record(const PlanSample& p, const fs::path& images_dir) {
  SftRecord rec;
  rec.tag = MixTag::Planner;
  rec.system = prompts::planner_system_prompt();
  Packager pk{images_dir, safe_component(p.task.id) + "/plan", {}, {}};
  bool ok = true;
  rec.messages = json::array();
  rec.messages.push_back(user_message(p.task, pk, ok));
  if (!ok) return std::nullopt;
  rec.messages.push_back({{"role", "assistant"}, {"content", p.plan_json}});
  rec.images = pk.images;
  rec.meta = {{"task_id", p.task.id}, {"rollout", "plan"}, {"source", p.task.source}, {"mode", "plan"},
              {"pipeline_version", prompts::pipeline_version()}};
  pk.commit();
  return rec;
}

}  // namespace

ExportStats export_sft(const std::vector<Trajectory>& trajs, const std::vector<PlanSample>& plans,
                       const fs::path& workspace_root, const fs::path& out_path, const fs::path& images_dir,
                       std::uint64_t seed) {
  ExportStats stats;
  std::set<std::string> seen;
  std::vector<std::pair<std::string, SftRecord>> records;
  for (const auto& t : trajs) {
    auto key = trajectory_key(t);
    if (!seen.insert(key).second) {
      ++stats.duplicates;
      continue;
    }
    auto rec = trajectory_record(t, workspace_root, images_dir);
    if (!rec) {
      ++stats.skipped;
      continue;
    }
    records.emplace_back(key, std::move(*rec));
  }
  for (const auto& p : plans) {
    auto key = p.task.id + "#plan";
    if (!seen.insert(key).second) {
      ++stats.duplicates;
      continue;
    }
    auto rec = plan_record(p, images_dir);
    if (!rec) {
      ++stats.skipped;
      continue;
    }
    records.emplace_back(key, std::move(*rec));
  }
  // Sort first so the shuffle does not depend on input order.
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::mt19937_64 rng(seed);
  fisher_yates(std::span(records), rng);
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& [key, rec] : records) {
    rows.push_back(to_json(rec));
    stats.per_tag[rec.tag]++;
  }
  stats.written = rows.size();
  write_jsonl(out_path, rows);
  return stats;
}

}  // namespace mmagent::curation
