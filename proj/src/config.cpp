#include "mmagent/config.hpp"

#include <cstdlib>
#include <fstream>

namespace mmagent::config {

namespace fs = std::filesystem;

namespace {

// Typed access to one JSON object with field-path errors.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_null() && !j_.is_object()) throw ConfigError(where("") + "expected object");
  }

  bool has(const char* key) const { return j_.is_object() && j_.contains(key) && !j_[key].is_null(); }

  Section sub(const char* key) const {
    static const json kEmpty = json::object();
    return has(key) ? Section(j_[key], where(key)) : Section(kEmpty, where(key));
  }

  std::string str(const char* key, std::string def) const {
    if (!has(key)) return def;
    if (!j_[key].is_string()) throw ConfigError(where(key) + ": expected string");
    return j_[key].get<std::string>();
  }

  std::int64_t integer(const char* key, std::int64_t def, std::int64_t lo = INT64_MIN) const {
    if (!has(key)) return def;
    if (!j_[key].is_number_integer()) throw ConfigError(where(key) + ": expected integer");
    auto v = j_[key].get<std::int64_t>();
    if (v < lo) throw ConfigError(where(key) + ": must be >= " + std::to_string(lo));
    return v;
  }

  std::uint64_t seed(const char* key, std::uint64_t def) const {
    if (!has(key)) return def;
    if (!j_[key].is_number_unsigned() && !(j_[key].is_number_integer() && j_[key].get<std::int64_t>() >= 0))
      throw ConfigError(where(key) + ": expected non-negative integer");
    return j_[key].get<std::uint64_t>();
  }

  double number(const char* key, double def) const {
    if (!has(key)) return def;
    if (!j_[key].is_number()) throw ConfigError(where(key) + ": expected number");
    return j_[key].get<double>();
  }

  bool boolean(const char* key, bool def) const {
    if (!has(key)) return def;
    if (!j_[key].is_boolean()) throw ConfigError(where(key) + ": expected boolean");
    return j_[key].get<bool>();
  }

  fs::path file(const char* key, const fs::path& base) const {
    auto s = str(key, "");
    if (s.empty()) return {};
    fs::path p(s);
    return p.is_absolute() || base.empty() ? p : base / p;
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& raw() const { return j_; }

 private:
  const json& j_;
  std::string path_;
};

template <class Fn>
auto wrap(const std::string& field, Fn fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

EndpointSpec parse_endpoint(const Section& s, const fs::path& base) {
  EndpointSpec e;
  const auto kind = s.str("kind", "http");
  if (kind == "http") e.kind = EndpointKind::Http;
  else if (kind == "scripted") e.kind = EndpointKind::Scripted;
  else if (kind == "offline") e.kind = EndpointKind::Offline;
  else throw ConfigError(s.where("kind") + ": unknown endpoint kind \"" + kind + "\"");
  e.http.base_url = s.str("base_url", "");
  e.http.model = s.str("model", "");
  e.http.api_key_env = s.str("api_key_env", "");
  e.http.timeout_s = s.number("timeout_s", 120.0);
  e.script = s.file("script", base);
  e.min_interval_ms = static_cast<int>(s.integer("min_interval_ms", 0, 0));
  if (e.kind == EndpointKind::Http && e.http.base_url.empty())
    throw ConfigError(s.where("base_url") + ": required for http endpoints");
  if (e.kind == EndpointKind::Scripted && e.script.empty())
    throw ConfigError(s.where("script") + ": required for scripted endpoints");
  return e;
}

void check_env(const std::string& field, const std::string& var) {
  if (var.empty()) return;
  const char* v = std::getenv(var.c_str());
  if (!v || !*v) throw ConfigError(field + ": environment variable " + var + " is not set");
}

void check_file(const std::string& field, const fs::path& p) {
  if (p.empty()) throw ConfigError(field + ": path required");
  if (!fs::is_regular_file(p)) throw ConfigError(field + ": file not found: " + p.string());
}

void check_endpoint(const Config& cfg, const std::string& role, bool required) {
  auto it = cfg.endpoints.find(role);
  if (it == cfg.endpoints.end()) {
    if (required) throw ConfigError("endpoints." + role + ": not configured");
    return;
  }
  const auto& e = it->second;
  const std::string field = "endpoints." + role;
  if (e.kind == EndpointKind::Http) check_env(field + ".api_key_env", e.http.api_key_env);
  if (e.kind == EndpointKind::Scripted) check_file(field + ".script", e.script);
}

}  // namespace

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + assignment + "\": expected key.path=value");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override \"" + assignment + "\": empty key segment");
    if (!cur->is_object()) {
      if (!cur->is_null()) throw ConfigError("override \"" + key + "\": " + part + " is not inside an object");
      *cur = json::object();
    }
    if (dot == std::string::npos) {
      (*cur)[part] = value;
      return;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
}

Config parse_config(const json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  Config c;
  c.raw = j;
  Section root(j, "");
  auto ws = root.str("workspace_root", "workspace");
  c.workspace_root = fs::path(ws).is_absolute() || base.empty() ? fs::path(ws) : base / ws;
  c.seed = root.seed("seed", 0);

  if (root.has("endpoints")) {
    Section eps = root.sub("endpoints");
    for (const auto& [role, _] : eps.raw().items()) c.endpoints[role] = parse_endpoint(eps.sub(role.c_str()), base);
  }

  Section s = root.sub("search");
  c.search.kind = s.str("kind", "serper");
  if (c.search.kind != "serper" && c.search.kind != "fixture")
    throw ConfigError(s.where("kind") + ": expected serper or fixture");
  c.search.serper.endpoint = s.str("endpoint", c.search.serper.endpoint);
  c.search.serper.api_key_env = s.str("api_key_env", c.search.serper.api_key_env);
  c.search.serper.result_limit = static_cast<int>(s.integer("result_limit", 5, 1));
  c.search.serper.timeout_s = s.number("timeout_s", 30.0);
  c.search.serper.image_host_base = s.str("image_host_base", "");
  c.search.fixture = s.file("fixture", base);
  wrap("search", [&] {
    toolbox::validate(c.search.serper);
    return 0;
  });

  Section w = root.sub("web");
  c.web.kind = w.str("kind", "http");
  if (c.web.kind != "http" && c.web.kind != "fixture") throw ConfigError(w.where("kind") + ": expected http or fixture");
  c.web.fixture = w.file("fixture", base);
  c.web.timeout_s = w.number("timeout_s", 20.0);
  c.web.summarize_threshold = static_cast<std::size_t>(w.integer("summarize_threshold", 4000, 1));

  Section sb = root.sub("sandbox");
  c.sandbox.kind = sb.str("kind", "http");
  if (c.sandbox.kind != "http" && c.sandbox.kind != "scripted")
    throw ConfigError(sb.where("kind") + ": expected http or scripted");
  c.sandbox.address = sb.str("address", c.sandbox.address);
  c.sandbox.script = sb.file("script", base);
  c.sandbox.settings.timeout_s = sb.number("timeout_s", 30.0);
  if (c.sandbox.settings.timeout_s <= 0) throw ConfigError(sb.where("timeout_s") + ": must be positive");
  c.sandbox.settings.memory_limit = sb.integer("memory_limit_mb", 2048, 1) << 20;
  c.sandbox.settings.policy = wrap(sb.where("policy"), [&] {
    return toolbox::import_policy_from_str(sb.str("policy", "imaging_only"));
  });

  Section t = root.sub("transcript");
  c.transcript_path = t.file("path", base);
  c.transcript_mode = wrap(t.where("mode"), [&] { return toolbox::transcript_mode_from_str(t.str("mode", "off")); });
  if (c.transcript_mode != toolbox::TranscriptMode::Off && c.transcript_path.empty())
    throw ConfigError(t.where("path") + ": required when transcript.mode is not off");

  Section e = root.sub("episode");
  auto& ep = c.episode;
  ep.mode = wrap(e.where("mode"), [&] { return orchestrator::mode_from_str(e.str("mode", "deep_research")); });
  ep.max_turns = static_cast<int>(e.integer("max_turns", 12, 1));
  ep.max_total_tokens = static_cast<int>(e.integer("max_total_tokens", 32768, 1));
  ep.temperature = e.number("temperature", 0.7);
  ep.max_tokens_per_turn = static_cast<int>(e.integer("max_tokens_per_turn", 0, 0));
  ep.endpoint_retries = static_cast<int>(e.integer("endpoint_retries", 2, 0));
  ep.malformed_retries = static_cast<int>(e.integer("malformed_retries", 1, 0));
  c.rollouts = static_cast<int>(e.integer("rollouts", 1, 1));
  Section tools = e.sub("tools");
  ep.image_search = tools.boolean("image_search", true);
  ep.text_search = tools.boolean("text_search", true);
  ep.web_visit = tools.boolean("web_visit", true);
  ep.code = tools.boolean("code", true);
  ep.seed = c.seed;
  ep.workspace_root = c.workspace_root;

  Section wk = root.sub("walk");
  auto& wc = c.walk;
  wc.window = static_cast<int>(wk.integer("window", 5, 1));
  wc.min_depth = static_cast<int>(wk.integer("min_depth", 2, 1));
  wc.max_depth = static_cast<int>(wk.integer("max_depth", 4, 1));
  if (wc.max_depth < wc.min_depth) throw ConfigError(wk.where("max_depth") + ": must be >= walk.min_depth");
  wc.max_answer_words = static_cast<int>(wk.integer("max_answer_words", 6, 1));
  wc.max_resamples = static_cast<int>(wk.integer("max_resamples", 3, 0));
  wc.require_grounded_answer = wk.boolean("require_grounded_answer", true);
  wc.multimodal = wk.boolean("multimodal", false);
  wc.min_image_side = static_cast<int>(wk.integer("min_image_side", 512, 1));
  wc.image_candidates = static_cast<int>(wk.integer("image_candidates", 10, 1));
  wc.seed = c.seed;
  c.graph.pervasive_fraction = wk.number("pervasive_fraction", 0.005);
  if (c.graph.pervasive_fraction < 0 || c.graph.pervasive_fraction >= 1)
    throw ConfigError(wk.where("pervasive_fraction") + ": must be in [0, 1)");
  return c;
}

Config load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + ": not valid JSON");
  for (const auto& o : overrides) apply_override(j, o);
  auto c = parse_config(j, path.parent_path());
  c.source = path;
  return c;
}

void validate(const Config& cfg, const std::vector<Need>& needs) {
  for (auto need : needs) {
    switch (need) {
      case Need::Model: check_endpoint(cfg, "model", true); break;
      case Need::Judge: check_endpoint(cfg, "judge", false); break;
      case Need::VlmJudge: check_endpoint(cfg, "vlm_judge", false); break;
      case Need::Summarizer: check_endpoint(cfg, "summarizer", false); break;
      case Need::WalkModels:
        check_endpoint(cfg, "qa", true);
        for (const auto& r : kWalkRoles) check_endpoint(cfg, r, false);
        break;
      case Need::Tools:
        if (cfg.search.kind == "serper") check_env("search.api_key_env", cfg.search.serper.api_key_env);
        else check_file("search.fixture", cfg.search.fixture);
        if (cfg.web.kind == "fixture") check_file("web.fixture", cfg.web.fixture);
        if (cfg.sandbox.kind == "scripted") check_file("sandbox.script", cfg.sandbox.script);
        else if (!starts_with(cfg.sandbox.address, "http://") && !starts_with(cfg.sandbox.address, "https://"))
          throw ConfigError("sandbox.address: expected an http(s) URL");
        if (cfg.transcript_mode == toolbox::TranscriptMode::Replay && !fs::is_regular_file(cfg.transcript_path))
          throw ConfigError("transcript.path: file not found: " + cfg.transcript_path.string());
        break;
    }
  }
  std::error_code ec;
  fs::create_directories(cfg.workspace_root, ec);
  const auto probe = cfg.workspace_root / ".write_probe";
  {
    std::ofstream f(probe);
    if (ec || !f) throw ConfigError("workspace_root: not writable: " + cfg.workspace_root.string());
  }
  fs::remove(probe, ec);
}

json redacted(const json& raw) {
  if (raw.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : raw.items()) {
      const auto lk = to_lower(k);
      const bool secret = (lk.find("key") != std::string::npos || lk.find("token") != std::string::npos ||
                           lk.find("secret") != std::string::npos || lk.find("password") != std::string::npos) &&
                          lk.size() > 4 && lk.substr(lk.size() - 4) != "_env";
      out[k] = secret && !v.is_object() ? json("***") : redacted(v);
    }
    return out;
  }
  if (raw.is_array()) {
    json out = json::array();
    for (const auto& v : raw) out.push_back(redacted(v));
    return out;
  }
  return raw;
}

llm::EndpointPtr make_endpoint(const Config& cfg, const std::string& role) {
  auto it = cfg.endpoints.find(role);
  if (it == cfg.endpoints.end()) throw ConfigError("endpoints." + role + ": not configured");
  const auto& spec = it->second;
  llm::EndpointPtr ep;
  switch (spec.kind) {
    case EndpointKind::Http: ep = std::make_shared<llm::HttpChatEndpoint>(spec.http); break;
    case EndpointKind::Scripted: ep = llm::ScriptedChatEndpoint::from_file(spec.script); break;
    case EndpointKind::Offline: ep = std::make_shared<querygen::OfflineWalkModel>(); break;
  }
  if (spec.min_interval_ms > 0)
    ep = std::make_shared<llm::RateLimitedEndpoint>(ep, std::chrono::milliseconds(spec.min_interval_ms));
  return ep;
}

llm::EndpointPtr make_optional_endpoint(const Config& cfg, const std::string& role) {
  return cfg.endpoints.count(role) ? make_endpoint(cfg, role) : nullptr;
}

llm::EndpointPtr make_walk_endpoint(const Config& cfg, const std::string& role) {
  return cfg.endpoints.count(role) ? make_endpoint(cfg, role) : make_endpoint(cfg, "qa");
}

std::shared_ptr<toolbox::TranscriptCache> make_transcript(const Config& cfg, toolbox::TranscriptMode mode) {
  if (mode == toolbox::TranscriptMode::Off) return nullptr;
  if (cfg.transcript_path.empty()) throw ConfigError("transcript.path: required");
  return std::make_shared<toolbox::TranscriptCache>(cfg.transcript_path, mode);
}

std::unique_ptr<toolbox::ToolRegistry> make_registry(const Config& cfg, std::shared_ptr<toolbox::TranscriptCache> tc,
                                                     bool offline_only) {
  toolbox::ToolboxConfig tcfg;
  tcfg.search = cfg.search.serper;
  tcfg.summarize_threshold = cfg.web.summarize_threshold;
  tcfg.sandbox = cfg.sandbox.settings;

  toolbox::SearchProviderPtr search;
  toolbox::PageFetcherPtr fetcher;
  toolbox::SandboxPtr sandbox;
  llm::EndpointPtr summarizer;
  if (offline_only) {
    search = std::make_shared<toolbox::FixtureProvider>(json::object());
    fetcher = std::make_shared<toolbox::FixturePageFetcher>(json::object());
    sandbox = std::make_shared<toolbox::ScriptedSandbox>(json::object());
  } else {
    if (cfg.search.kind == "fixture") search = toolbox::FixtureProvider::from_file(cfg.search.fixture);
    else search = std::make_shared<toolbox::SerperProvider>(cfg.search.serper);
    if (cfg.web.kind == "fixture") {
      json pages = json::parse(read_file(cfg.web.fixture), nullptr, false);
      if (pages.is_discarded() || !pages.is_object()) throw ConfigError("web.fixture: expected a JSON object");
      fetcher = std::make_shared<toolbox::FixturePageFetcher>(std::move(pages));
    } else {
      fetcher = std::make_shared<toolbox::HttpPageFetcher>(cfg.web.timeout_s);
    }
    if (cfg.sandbox.kind == "scripted") sandbox = toolbox::ScriptedSandbox::from_file(cfg.sandbox.script);
    else sandbox = std::make_shared<toolbox::HttpSandboxClient>(cfg.sandbox.address);
    summarizer = make_optional_endpoint(cfg, "summarizer");
  }
  return std::make_unique<toolbox::ToolRegistry>(tcfg, search, fetcher, sandbox, summarizer, std::move(tc),
                                                 cfg.workspace_root);
}

}  // namespace mmagent::config
