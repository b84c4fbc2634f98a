#include "mmagent/sandbox_client.hpp"

#include <algorithm>
#include <chrono>

#include "mmagent/http.hpp"

namespace mmagent::toolbox {

std::string_view import_policy_str(ImportPolicy p) {
  return p == ImportPolicy::Permissive ? "permissive" : "imaging_only";
}

ImportPolicy import_policy_from_str(std::string_view s) {
  if (s == "imaging_only") return ImportPolicy::ImagingOnly;
  if (s == "permissive") return ImportPolicy::Permissive;
  throw ConfigError("unknown allowed_imports_policy: " + std::string(s));
}

json to_json(const ExecRequest& req) {
  return {{"code", req.code},
          {"workspace", req.workspace},
          {"timeout", req.timeout_s},
          {"memory_limit", req.memory_limit},
          {"allowed_imports_policy", import_policy_str(req.allowed_imports_policy)}};
}

ExecRequest exec_request_from_json(const json& j) {
  ExecRequest r;
  try {
    r.code = j.at("code").get<std::string>();
    r.workspace = j.at("workspace").get<std::string>();
    r.timeout_s = j.at("timeout").get<double>();
    r.memory_limit = j.value("memory_limit", r.memory_limit);
    r.allowed_imports_policy = import_policy_from_str(j.value("allowed_imports_policy", "imaging_only"));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad exec request: ") + e.what());
  }
  return r;
}

json to_json(const ExecResponse& resp) {
  json j = {{"stdout", resp.stdout_text},
            {"stderr", resp.stderr_text},
            {"exit_status", resp.exit_status},
            {"produced_files", resp.produced_files},
            {"wall_time", resp.wall_time}};
  if (resp.timed_out) j["timed_out"] = true;
  return j;
}

ExecResponse exec_response_from_json(const json& j) {
  ExecResponse r;
  try {
    r.stdout_text = j.at("stdout").get<std::string>();
    r.stderr_text = j.value("stderr", "");
    r.exit_status = j.at("exit_status").get<int>();
    r.produced_files = j.value("produced_files", std::vector<std::string>{});
    r.wall_time = j.value("wall_time", 0.0);
    r.timed_out = j.value("timed_out", false);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad exec response: ") + e.what());
  }
  return r;
}

// ---- HTTP ----------------------------------------------------------------------

HttpSandboxClient::HttpSandboxClient(std::string base_url, double grace_s)
    : base_url_(std::move(base_url)), grace_s_(grace_s) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

ExecResponse HttpSandboxClient::execute(const ExecRequest& req) {
  const auto start = std::chrono::steady_clock::now();
  auto resp = http::post_json(base_url_ + "/execute", to_json(req).dump(), {}, req.timeout_s + grace_s_);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (resp.status == 0 && resp.read_failed && elapsed >= req.timeout_s) {
    ExecResponse out;
    out.exit_status = 124;
    out.timed_out = true;
    out.wall_time = req.timeout_s;
    out.stderr_text = "sandbox: execution timed out after " + std::to_string(req.timeout_s) + " s";
    return out;
  }
  if (resp.status == 0) throw SandboxUnreachable("sandbox unreachable at " + base_url_ + ": " + resp.error);
  if (resp.status != 200)
    throw SandboxUnreachable("sandbox returned HTTP " + std::to_string(resp.status) + " at " + base_url_);
  auto j = json::parse(resp.body, nullptr, false);
  if (j.is_discarded()) throw SandboxUnreachable("sandbox returned invalid JSON");
  try {
    auto out = exec_response_from_json(j);
    out.wall_time = std::min(out.wall_time, req.timeout_s);
    return out;
  } catch (const DataError& e) {
    throw SandboxUnreachable(e.what());
  }
}

bool HttpSandboxClient::health() {
  auto resp = http::get(base_url_ + "/health", {}, 5.0);
  return resp.status == 200;
}

// ---- scripted ------------------------------------------------------------------

std::string tiny_png() {
  static const unsigned char kBytes[] = {
      0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52,
      0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f, 0x15, 0xc4,
      0x89, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x60, 0x60, 0x60, 0x60,
      0x00, 0x00, 0x00, 0x05, 0x00, 0x01, 0xa5, 0xf6, 0x45, 0x40, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45,
      0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};
  return std::string(reinterpret_cast<const char*>(kBytes), sizeof(kBytes));
}

ScriptedSandbox::ScriptedSandbox(json script) : script_(std::move(script)) {}

std::shared_ptr<ScriptedSandbox> ScriptedSandbox::from_file(const std::filesystem::path& path) {
  auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("sandbox script is not a JSON object: " + path.string());
  return std::make_shared<ScriptedSandbox>(std::move(j));
}

ExecResponse ScriptedSandbox::execute(const ExecRequest& req) {
  const json* chosen = nullptr;
  if (auto rules = script_.find("rules"); rules != script_.end()) {
    for (const auto& rule : *rules) {
      bool all = true;
      for (const auto& s : rule.value("contains", json::array()))
        if (req.code.find(s.get<std::string>()) == std::string::npos) all = false;
      if (all) {
        chosen = &rule;
        break;
      }
    }
  }
  static const json kEmpty = json::object();
  if (!chosen) chosen = script_.contains("default") ? &script_.at("default") : &kEmpty;
  const json& r = *chosen;
  ExecResponse out;
  out.stdout_text = r.value("stdout", "");
  out.stderr_text = r.value("stderr", "");
  out.exit_status = r.value("exit_status", 0);
  out.wall_time = std::min(r.value("wall_time", 0.0), req.timeout_s);
  out.timed_out = r.value("timed_out", false);
  if (out.timed_out) {
    out.exit_status = 124;
    out.wall_time = req.timeout_s;
  }
  for (const auto& f : r.value("write", json::array())) {
    auto rel = f.get<std::string>();
    write_file(std::filesystem::path(req.workspace) / rel, tiny_png());
    out.produced_files.push_back(rel);
  }
  return out;
}

}  // namespace mmagent::toolbox
