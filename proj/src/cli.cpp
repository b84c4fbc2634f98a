#include "mmagent/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

#include "mmagent/config.hpp"
#include "mmagent/curation.hpp"
#include "mmagent/evalbench.hpp"
#include "mmagent/planner.hpp"
#include "mmagent/prompts.hpp"
#include "mmagent/querygen.hpp"

namespace mmagent::cli {

namespace fs = std::filesystem;
using orchestrator::Trajectory;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string log_level = "info";
  std::optional<std::uint64_t> seed;
};

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

config::Config load(const Common& c) {
  if (c.config_path.empty()) throw ConfigError("--config is required");
  auto overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  auto cfg = config::load_config(c.config_path, overrides);
  log(LogLevel::Info, "effective config: " + config::redacted(cfg.raw).dump(2));
  return cfg;
}

std::vector<Trajectory> read_trajectories(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw DataError("trajectory file not found: " + path.string());
  std::vector<Trajectory> out;
  for (const auto& row : read_jsonl(path)) out.push_back(orchestrator::trajectory_from_json(row));
  return out;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string buf;
  for (const auto& l : lines) buf += l + "\n";
  write_file(path, buf);
}

void write_trajectories(const fs::path& path, const std::vector<Trajectory>& ts) {
  std::vector<std::string> lines;
  lines.reserve(ts.size());
  for (const auto& t : ts) lines.push_back(orchestrator::trajectory_line(t));
  write_lines(path, lines);
}

std::vector<orchestrator::Task> read_tasks(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw DataError("task file not found: " + path.string());
  return evalbench::load_dataset(path);
}

LogLevel parse_level(const std::string& s) {
  if (s == "debug") return LogLevel::Debug;
  if (s == "info") return LogLevel::Info;
  if (s == "warn") return LogLevel::Warn;
  if (s == "error") return LogLevel::Error;
  if (s == "off") return LogLevel::Off;
  throw ConfigError("--log-level: unknown level " + s);
}

// ---- generate --------------------------------------------------------------------

struct GenerateOpts {
  std::string tasks, out, mode;
  int rollouts = 0;
  bool serial = false;
};

int cmd_generate(const Common& c, const GenerateOpts& o, const std::vector<std::string>& args) {
  auto cfg = load(c);
  if (!o.mode.empty()) cfg.episode.mode = orchestrator::mode_from_str(o.mode);
  config::validate(cfg, {config::Need::Model, config::Need::Summarizer, config::Need::Tools});
  auto tasks = read_tasks(o.tasks);
  write_manifest(o.out, "generate", cfg.raw.dump(), {c.config_path, o.tasks}, cfg.seed, args);

  auto model = config::make_endpoint(cfg, "model");
  auto mode = cfg.transcript_mode;
  auto reg = config::make_registry(cfg, config::make_transcript(cfg, mode), mode == toolbox::TranscriptMode::Replay);
  const int n = o.rollouts > 0 ? o.rollouts : cfg.rollouts;
  auto trajs = o.serial ? orchestrator::generate_batch_serial(tasks, cfg.episode, n, *model, *reg)
                        : orchestrator::generate_batch(tasks, cfg.episode, n, *model, *reg);
  write_trajectories(o.out, trajs);
  std::map<std::string, int> by_term;
  for (const auto& t : trajs) by_term[std::string(orchestrator::termination_str(t.termination))]++;
  std::cerr << "generated " << trajs.size() << " trajectories:";
  for (const auto& [k, v] : by_term) std::cerr << " " << k << "=" << v;
  std::cerr << "\n";
  return kOk;
}

// ---- curate ------------------------------------------------------------------------

struct CurateOpts {
  std::string trajectories, out, verdicts, passed, report, images_dir;
  bool serial = false;
};

bool same_verdict(const curation::FilterVerdict& a, const curation::FilterVerdict& b) {
  return a.stage == b.stage && a.status == b.status && a.reason == b.reason && a.pipeline_version == b.pipeline_version &&
         a.judge_raw == b.judge_raw && a.steps == b.steps;
}

int cmd_curate(const Common& c, const CurateOpts& o, const std::vector<std::string>& args) {
  auto cfg = load(c);
  config::validate(cfg, {config::Need::Judge, config::Need::VlmJudge});
  auto trajs = read_trajectories(o.trajectories);
  write_manifest(o.out, "curate", cfg.raw.dump(), {c.config_path, o.trajectories}, cfg.seed, args);

  auto judge = config::make_optional_endpoint(cfg, "judge");
  auto vlm = config::make_optional_endpoint(cfg, "vlm_judge");
  if (!judge) log_warn("no judge endpoint: answer checks without an exact match stay pending");
  if (!vlm) log_warn("no vlm_judge endpoint: step-wise checks with images stay pending");
  curation::PipelineConfig pc{judge.get(), vlm.get(), cfg.workspace_root};

  const fs::path store = o.verdicts.empty() ? fs::path(o.out + ".verdicts.jsonl") : fs::path(o.verdicts);
  auto prior = curation::load_verdicts(store);
  auto results = o.serial ? curation::run_pipeline_serial(trajs, pc, &prior) : curation::run_pipeline(trajs, pc, &prior);

  std::vector<curation::CurationResult> fresh;
  for (const auto& r : results) {
    curation::CurationResult delta{r.key, {}, {}};
    const auto it = prior.find(r.key);
    for (const auto& v : r.verdicts) {
      bool known = false;
      if (it != prior.end())
        for (const auto& p : it->second) known = known || same_verdict(p, v);
      if (!known) delta.verdicts.push_back(v);
    }
    if (!delta.verdicts.empty()) fresh.push_back(std::move(delta));
  }
  curation::append_verdicts(store, fresh);

  std::vector<Trajectory> kept;
  std::vector<curation::FunctionTags> kept_tags;
  std::map<std::string, int> blocked;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (results[i].passed_all()) {
      kept.push_back(trajs[i]);
      kept_tags.push_back(results[i].tags);
    } else if (const auto* b = results[i].blocking()) {
      blocked[std::string(curation::stage_str(b->stage)) + ":" + std::string(curation::status_str(b->status))]++;
    }
  }
  if (!o.passed.empty()) write_trajectories(o.passed, kept);
  if (!o.report.empty()) write_file(o.report, curation::distribution_csv(kept_tags));
  const fs::path images = o.images_dir.empty() ? fs::path(o.out).parent_path() / "images" : fs::path(o.images_dir);
  auto stats = curation::export_sft(kept, {}, cfg.workspace_root, o.out, images, cfg.seed);

  std::cerr << "curated " << trajs.size() << " trajectories: " << kept.size() << " passed";
  for (const auto& [k, v] : blocked) std::cerr << ", " << k << "=" << v;
  std::cerr << "; exported " << stats.written << " (skipped " << stats.skipped << ")\n";
  return kOk;
}

// ---- plan / export -----------------------------------------------------------------

struct PlanOpts {
  std::string trajectories, out;
  bool strict = false;
};

int cmd_plan(const Common& c, const PlanOpts& o, const std::vector<std::string>& args) {
  std::string cfg_json = "{}";
  if (!c.config_path.empty()) cfg_json = load(c).raw.dump();
  auto trajs = read_trajectories(o.trajectories);
  write_manifest(o.out, "plan", cfg_json, {o.trajectories}, 0, args);
  planner::ConvertOptions opt;
  opt.strict = o.strict;
  std::vector<curation::PlanSample> samples;
  std::map<std::string, int> errors;
  std::set<std::string> seen;
  for (const auto& t : trajs) {
    if (!seen.insert(t.task.id).second) continue;  // one plan per task
    try {
      samples.push_back(planner::make_plan_sample(t, opt));
    } catch (const planner::PlanError& e) {
      errors[std::string(planner::plan_error_str(e.kind()))]++;
      log(LogLevel::Debug, "plan: " + t.task.id + ": " + e.what());
    }
  }
  planner::write_plan_samples(o.out, samples);
  std::cerr << "plans: " << samples.size() << " written";
  for (const auto& [k, v] : errors) std::cerr << ", " << k << "=" << v;
  std::cerr << "\n";
  return kOk;
}

struct ExportOpts {
  std::string trajectories, plans, out, images_dir;
};

int cmd_export(const Common& c, const ExportOpts& o, const std::vector<std::string>& args) {
  auto cfg = load(c);
  std::vector<Trajectory> trajs;
  std::vector<curation::PlanSample> plans;
  std::vector<fs::path> inputs{c.config_path};
  if (!o.trajectories.empty()) {
    trajs = read_trajectories(o.trajectories);
    inputs.emplace_back(o.trajectories);
  }
  if (!o.plans.empty()) {
    if (!fs::is_regular_file(o.plans)) throw DataError("plan file not found: " + o.plans);
    plans = planner::read_plan_samples(o.plans);
    inputs.emplace_back(o.plans);
  }
  write_manifest(o.out, "export", cfg.raw.dump(), inputs, cfg.seed, args);
  const fs::path images = o.images_dir.empty() ? fs::path(o.out).parent_path() / "images" : fs::path(o.images_dir);
  auto stats = curation::export_sft(trajs, plans, cfg.workspace_root, o.out, images, cfg.seed);
  std::cerr << "exported " << stats.written << " records (skipped " << stats.skipped << ", duplicates "
            << stats.duplicates << "):";
  for (const auto& [tag, n] : stats.per_tag) std::cerr << " " << curation::mix_tag_str(tag) << "=" << n;
  std::cerr << "\n";
  return kOk;
}

// ---- walk --------------------------------------------------------------------------

struct WalkOpts {
  std::string dump, out;
  std::size_t count = 100;
  std::vector<std::string> seed_titles;
  bool multimodal = false;
  bool serial = false;
};

int cmd_walk(const Common& c, const WalkOpts& o, const std::vector<std::string>& args) {
  auto cfg = load(c);
  if (o.multimodal) cfg.walk.multimodal = true;
  std::vector<config::Need> needs{config::Need::WalkModels};
  if (cfg.walk.multimodal) needs.push_back(config::Need::Tools);
  config::validate(cfg, needs);
  if (!fs::is_regular_file(o.dump)) throw DataError("dump not found: " + o.dump);
  write_manifest(o.out, "walk", cfg.raw.dump(), {c.config_path, o.dump}, cfg.seed, args);

  auto pages = querygen::read_dump(o.dump);
  auto graph = querygen::build_graph(pages, cfg.graph);
  std::vector<int> seeds;
  if (!o.seed_titles.empty()) {
    for (const auto& t : o.seed_titles) {
      auto id = graph.find(t);
      if (!id) throw DataError("seed entity not in the dump: " + t);
      seeds.push_back(*id);
    }
  } else {
    seeds = querygen::sample_seed_nodes(graph, o.count, cfg.seed);
  }
  std::map<std::string, llm::EndpointPtr> eps;
  for (const auto& role : config::kWalkRoles) eps[role] = config::make_walk_endpoint(cfg, role);
  querygen::WalkEndpoints we{eps["qa"].get(), eps["evaluator"].get(), eps["extractor"].get(), eps["rewriter"].get(),
                             eps["checker"].get()};
  std::unique_ptr<toolbox::SearchProvider> own;
  toolbox::SearchProviderPtr provider;
  querygen::ImageSource images;
  if (cfg.walk.multimodal) {
    provider = cfg.search.kind == "fixture" ? toolbox::SearchProviderPtr(toolbox::FixtureProvider::from_file(cfg.search.fixture))
                                            : std::make_shared<toolbox::SerperProvider>(cfg.search.serper);
    images.provider = provider.get();
  }
  auto records = o.serial ? querygen::run_walks_serial(graph, seeds, we, cfg.walk, &images)
                          : querygen::run_walks(graph, seeds, we, cfg.walk, &images);
  std::vector<json> rows;
  std::map<std::string, int> by_status;
  for (const auto& r : records) {
    rows.push_back(querygen::to_json(r, graph));
    std::string key(querygen::walk_status_str(r.status));
    if (r.reason != querygen::RejectReason::None) key += ":" + std::string(querygen::reject_reason_str(r.reason));
    by_status[key]++;
  }
  write_jsonl(o.out, rows);
  std::cerr << "graph: " << graph.nodes.size() << " nodes, " << graph.edge_count() << " edges; walks:";
  for (const auto& [k, v] : by_status) std::cerr << " " << k << "=" << v;
  std::cerr << "\n";
  return kOk;
}

// ---- eval --------------------------------------------------------------------------

struct EvalOpts {
  std::string dataset, out, report, mode = "direct";
  std::optional<double> sample;
  bool no_resume = false;
  bool virtual_clock = false;
};

int cmd_eval(const Common& c, const EvalOpts& o, const std::vector<std::string>& args) {
  auto cfg = load(c);
  const auto mode = evalbench::eval_mode_from_str(o.mode);
  std::vector<config::Need> needs{config::Need::Model, config::Need::Judge};
  if (mode == evalbench::EvalMode::Search) {
    needs.push_back(config::Need::Tools);
    needs.push_back(config::Need::Summarizer);
  }
  config::validate(cfg, needs);
  auto tasks = read_tasks(o.dataset);
  write_manifest(o.out, "eval", cfg.raw.dump(), {c.config_path, o.dataset}, cfg.seed, args);

  auto model = config::make_endpoint(cfg, "model");
  auto judge = config::make_optional_endpoint(cfg, "judge");
  std::unique_ptr<toolbox::ToolRegistry> reg;
  if (mode == evalbench::EvalMode::Search) {
    reg = config::make_registry(cfg, config::make_transcript(cfg, cfg.transcript_mode),
                                cfg.transcript_mode == toolbox::TranscriptMode::Replay);
  } else {
    reg = config::make_registry(cfg, nullptr, true);
  }
  evalbench::BenchConfig bc;
  bc.mode = mode;
  bc.sample_fraction = o.sample;
  bc.seed = cfg.seed;
  bc.episode = cfg.episode;
  bc.out = o.out;
  bc.resume = !o.no_resume;
  std::unique_ptr<evalbench::Clock> clock;
  if (o.virtual_clock) clock = std::make_unique<evalbench::VirtualClock>();
  else clock = std::make_unique<evalbench::SteadyClock>();
  auto records = evalbench::run_benchmark(tasks, bc, *model, *reg, judge.get(), *clock);
  const std::string label = fs::path(o.dataset).stem().string() + "/" + o.mode;
  auto m = evalbench::compute_metrics(records);
  std::cout << evalbench::metrics_table(m, label);
  if (!o.report.empty()) write_file(o.report, evalbench::metrics_csv_header() + evalbench::metrics_csv_row(m, label));
  return kOk;
}

// ---- replay ------------------------------------------------------------------------

struct ReplayOpts {
  std::string trajectories, out, transcript;
};

int cmd_replay(const Common& c, const ReplayOpts& o, const std::vector<std::string>& args) {
  auto overrides = c.overrides;
  overrides.push_back("transcript.mode=\"replay\"");
  if (!o.transcript.empty()) overrides.push_back("transcript.path=" + json(fs::absolute(o.transcript).string()).dump());
  Common cc = c;
  cc.overrides = overrides;
  auto cfg = load(cc);
  config::validate(cfg, {});
  if (!fs::is_regular_file(cfg.transcript_path)) throw ConfigError("transcript.path: file not found: " + cfg.transcript_path.string());
  auto trajs = read_trajectories(o.trajectories);
  write_manifest(o.out, "replay", cfg.raw.dump(), {c.config_path, o.trajectories, cfg.transcript_path}, cfg.seed, args);

  auto reg = config::make_registry(cfg, config::make_transcript(cfg, toolbox::TranscriptMode::Replay), true);
  std::vector<std::string> lines;
  std::size_t diverged = 0;
  for (const auto& t : trajs) {
    orchestrator::ReplayEndpoint ep(t);
    auto rc = orchestrator::replay_config(t, cfg.episode);
    auto again = orchestrator::run_episode(t.task, rc, ep, *reg, t.rollout);
    lines.push_back(orchestrator::trajectory_line(again));
    if (lines.back() != orchestrator::trajectory_line(t)) {
      ++diverged;
      log_warn("replay diverged: " + curation::trajectory_key(t));
    }
  }
  write_lines(o.out, lines);
  std::cerr << "replayed " << trajs.size() << " trajectories, " << diverged << " diverged\n";
  if (diverged) throw DataError(std::to_string(diverged) + " trajectories did not replay identically");
  return kOk;
}

}  // namespace

void write_manifest(const fs::path& out, const std::string& subcommand, const std::string& config_json,
                    const std::vector<fs::path>& inputs, std::uint64_t seed, const std::vector<std::string>& args) {
  json in = json::object();
  for (const auto& p : inputs) {
    if (p.empty()) continue;
    in[p.string()] = fs::is_regular_file(p) ? json(sha256_hex(read_file(p))) : json(nullptr);
  }
  json m = {{"subcommand", subcommand},
            {"config_sha256", sha256_hex(config_json)},
            {"inputs", in},
            {"seed", seed},
            {"args", args},
            {"pipeline_version", prompts::pipeline_version()},
            {"started_at", utc_now()}};
  fs::path path = out;
  path += ".manifest.json";
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_file(path, m.dump(2) + "\n");
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Multimodal agent data engine"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config_path, "JSON config file");
  app.add_option("--set", common.overrides, "Override a config field: key.path=value")->take_all();
  app.add_option("--log-level", common.log_level, "debug|info|warn|error|off");
  app.add_option("--seed", common.seed, "RNG seed (overrides config)");

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "Run episodes for a task file");
  g->add_option("--tasks", gen.tasks, "Task JSONL")->required();
  g->add_option("--out", gen.out, "Trajectory JSONL")->required();
  g->add_option("--rollouts", gen.rollouts, "Rollouts per task");
  g->add_option("--mode", gen.mode, "general|deep_research|plan|direct");
  g->add_flag("--serial", gen.serial, "Run episodes one at a time");

  CurateOpts cur;
  auto* cu = app.add_subcommand("curate", "Filter trajectories and export SFT records");
  cu->add_option("--trajectories", cur.trajectories, "Trajectory JSONL")->required();
  cu->add_option("--out", cur.out, "SFT JSONL")->required();
  cu->add_option("--verdicts", cur.verdicts, "Verdict store (default <out>.verdicts.jsonl)");
  cu->add_option("--passed", cur.passed, "Write the trajectories that passed every stage");
  cu->add_option("--report", cur.report, "Operation distribution CSV");
  cu->add_option("--images-dir", cur.images_dir, "Packaged image directory");
  cu->add_flag("--serial", cur.serial, "Curate one trajectory at a time");

  PlanOpts pl;
  auto* p = app.add_subcommand("plan", "Convert trajectories into plan supervision");
  p->add_option("--trajectories", pl.trajectories, "Trajectory JSONL")->required();
  p->add_option("--out", pl.out, "Plan sample JSONL")->required();
  p->add_flag("--strict", pl.strict, "Reject trajectories with code turns");

  ExportOpts ex;
  auto* e = app.add_subcommand("export", "Mix curated trajectories and plans into one SFT file");
  e->add_option("--trajectories", ex.trajectories, "Curated trajectory JSONL");
  e->add_option("--plans", ex.plans, "Plan sample JSONL");
  e->add_option("--out", ex.out, "SFT JSONL")->required();
  e->add_option("--images-dir", ex.images_dir, "Packaged image directory");

  WalkOpts wk;
  auto* w = app.add_subcommand("walk", "Generate multi-hop queries from an encyclopedia dump");
  w->add_option("--dump", wk.dump, "Dump JSONL")->required();
  w->add_option("--out", wk.out, "Query JSONL")->required();
  w->add_option("--count", wk.count, "Number of walks");
  w->add_option("--entity", wk.seed_titles, "Seed entity title (repeatable)");
  w->add_flag("--multimodal", wk.multimodal, "Ground the final entity in an image");
  w->add_flag("--serial", wk.serial, "Run walks one at a time");

  EvalOpts ev;
  auto* v = app.add_subcommand("eval", "Benchmark a dataset sequentially");
  v->add_option("--dataset", ev.dataset, "Dataset JSONL")->required();
  v->add_option("--out", ev.out, "Record JSONL (appended, resumable)")->required();
  v->add_option("--mode", ev.mode, "direct|search");
  v->add_option("--sample", ev.sample, "Seeded subsample fraction");
  v->add_option("--report", ev.report, "Metrics CSV");
  v->add_flag("--no-resume", ev.no_resume, "Ignore records already in --out");
  v->add_flag("--virtual-clock", ev.virtual_clock, "Time by reported latencies instead of the wall clock");

  ReplayOpts rp;
  auto* r = app.add_subcommand("replay", "Re-run stored trajectories against the transcript");
  r->add_option("--trajectories", rp.trajectories, "Trajectory JSONL")->required();
  r->add_option("--out", rp.out, "Replayed trajectory JSONL")->required();
  r->add_option("--transcript", rp.transcript, "Transcript JSONL (overrides config)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kConfig;
  }

  try {
    set_log_level(parse_level(common.log_level));
    if (*g) return cmd_generate(common, gen, args);
    if (*cu) return cmd_curate(common, cur, args);
    if (*p) return cmd_plan(common, pl, args);
    if (*e) return cmd_export(common, ex, args);
    if (*w) return cmd_walk(common, wk, args);
    if (*v) return cmd_eval(common, ev, args);
    if (*r) return cmd_replay(common, rp, args);
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kConfig;
  } catch (const llm::EndpointError& ex) {
    std::cerr << "endpoint error: " << ex.what() << "\n";
    return kEndpoint;
  } catch (const toolbox::SandboxUnreachable& ex) {
    std::cerr << "endpoint error: " << ex.what() << "\n";
    return kEndpoint;
  } catch (const toolbox::ProviderUnavailable& ex) {
    std::cerr << "endpoint error: " << ex.what() << "\n";
    return kEndpoint;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const std::exception& ex) {
    std::cerr << "internal error: " << ex.what() << "\n";
    return kInternal;
  }
  return kInternal;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace mmagent::cli
