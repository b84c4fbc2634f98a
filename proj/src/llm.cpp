#include "mmagent/llm.hpp"

#include <cstdlib>
#include <thread>

#include "mmagent/http.hpp"

namespace mmagent::llm {

namespace {

std::string mime_for(const std::filesystem::path& p) {
  auto ext = to_lower(p.extension().string());
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "image/png";
}

// Observations travel as user turns; chat APIs know no "observation" role.
std::string wire_role(const std::string& role) { return role == "observation" ? "user" : role; }

}  // namespace

ChatResponse ChatEndpoint::stream(const ChatRequest& req, const DeltaCallback& on_delta) {
  auto resp = complete(req);
  if (!on_delta(resp.content)) resp.finish_reason = "stopped";
  return resp;
}

std::string request_text(const ChatRequest& req) {
  std::string out;
  for (const auto& m : req.messages) {
    out += m.content;
    out += '\n';
  }
  return out;
}

int count_assistant_turns(const ChatRequest& req) {
  int n = 0;
  for (const auto& m : req.messages)
    if (m.role == "assistant") ++n;
  return n;
}

void ensure_usage(ChatResponse& resp, const ChatRequest& req) {
  if (resp.usage.reported) return;
  resp.usage.completion_tokens = estimate_tokens(resp.content);
  resp.usage.prompt_tokens = estimate_tokens(request_text(req));
}

// ---- HTTP --------------------------------------------------------------------

HttpChatEndpoint::HttpChatEndpoint(HttpEndpointConfig cfg) : cfg_(std::move(cfg)) {}

std::string HttpChatEndpoint::api_key() const {
  if (cfg_.api_key_env.empty()) return {};
  const char* v = std::getenv(cfg_.api_key_env.c_str());
  if (!v || !*v) throw EndpointError("environment variable " + cfg_.api_key_env + " is not set");
  return v;
}

json HttpChatEndpoint::build_body(const ChatRequest& req, bool stream) const {
  json messages = json::array();
  for (const auto& m : req.messages) {
    if (m.images.empty()) {
      messages.push_back({{"role", wire_role(m.role)}, {"content", m.content}});
      continue;
    }
    json parts = json::array();
    for (const auto& img : m.images) {
      std::string url = img;
      if (!starts_with(img, "http://") && !starts_with(img, "https://") && !starts_with(img, "data:"))
        url = "data:" + mime_for(img) + ";base64," + base64_encode(read_file(img));
      parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
    }
    parts.push_back({{"type", "text"}, {"text", m.content}});
    messages.push_back({{"role", wire_role(m.role)}, {"content", parts}});
  }
  json body = {{"model", cfg_.model}, {"messages", messages}, {"temperature", req.temperature}};
  if (req.seed) body["seed"] = *req.seed;
  if (req.max_tokens > 0) body["max_tokens"] = req.max_tokens;
  if (stream) {
    body["stream"] = true;
    body["stream_options"] = {{"include_usage", true}};
  }
  return body;
}

ChatResponse HttpChatEndpoint::complete(const ChatRequest& req) {
  http::Headers headers;
  if (auto key = api_key(); !key.empty()) headers["Authorization"] = "Bearer " + key;
  const auto start = std::chrono::steady_clock::now();
  auto res = http::post_json(cfg_.base_url + "/chat/completions", dump_json(build_body(req, false)), headers,
                             cfg_.timeout_s);
  if (res.status == 0) throw EndpointError("transport error: " + res.error);
  if (res.status >= 400) throw EndpointError("HTTP " + std::to_string(res.status) + ": " + res.body, res.status);
  auto j = json::parse(res.body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
    throw EndpointError("malformed completion response");
  ChatResponse out;
  out.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& choice = j["choices"][0];
  out.content = choice.value("message", json::object()).value("content", "");
  out.finish_reason = choice.value("finish_reason", "stop");
  if (j.contains("usage") && j["usage"].is_object()) {
    out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
    out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    out.usage.reported = true;
  }
  ensure_usage(out, req);
  return out;
}

ChatResponse HttpChatEndpoint::stream(const ChatRequest& req, const DeltaCallback& on_delta) {
  http::Headers headers;
  if (auto key = api_key(); !key.empty()) headers["Authorization"] = "Bearer " + key;
  headers["Accept"] = "text/event-stream";
  ChatResponse out;
  std::string pending;
  bool stopped = false;
  const auto start = std::chrono::steady_clock::now();
  auto on_chunk = [&](std::string_view chunk) {
    pending.append(chunk);
    std::size_t nl;
    while ((nl = pending.find('\n')) != std::string::npos) {
      std::string line = trim(std::string_view(pending).substr(0, nl));
      pending.erase(0, nl + 1);
      if (!starts_with(line, "data:")) continue;
      std::string data = trim(std::string_view(line).substr(5));
      if (data == "[DONE]") continue;
      auto ev = json::parse(data, nullptr, false);
      if (ev.is_discarded()) continue;
      if (ev.contains("usage") && ev["usage"].is_object()) {
        out.usage.prompt_tokens = ev["usage"].value("prompt_tokens", 0);
        out.usage.completion_tokens = ev["usage"].value("completion_tokens", 0);
        out.usage.reported = true;
      }
      if (!ev.contains("choices") || ev["choices"].empty()) continue;
      const auto& choice = ev["choices"][0];
      if (choice.contains("finish_reason") && choice["finish_reason"].is_string())
        out.finish_reason = choice["finish_reason"].get<std::string>();
      const auto delta = choice.value("delta", json::object()).value("content", json());
      if (!delta.is_string()) continue;
      const auto text = delta.get<std::string>();
      out.content += text;
      if (!on_delta(text)) {
        stopped = true;
        return false;
      }
    }
    return true;
  };
  auto res = http::post_stream(cfg_.base_url + "/chat/completions", dump_json(build_body(req, true)), headers,
                               cfg_.timeout_s, on_chunk);
  if (res.status == 0 && !stopped) throw EndpointError("transport error: " + res.error);
  if (res.status >= 400) throw EndpointError("HTTP " + std::to_string(res.status) + ": " + res.body, res.status);
  out.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (stopped) out.finish_reason = "stopped";
  ensure_usage(out, req);
  return out;
}

// ---- scripted -------------------------------------------------------------------

ScriptedChatEndpoint::ScriptedChatEndpoint(json script) : script_(std::move(script)) {
  if (!script_.is_object()) throw ConfigError("scripted endpoint: script must be a JSON object");
}

std::shared_ptr<ScriptedChatEndpoint> ScriptedChatEndpoint::from_file(const std::filesystem::path& path) {
  auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("scripted endpoint: invalid JSON in " + path.string());
  return std::make_shared<ScriptedChatEndpoint>(std::move(j));
}

ChatResponse ScriptedChatEndpoint::complete(const ChatRequest& req) {
  const auto text = request_text(req);
  const json* replies = nullptr;
  static const json kNone = json::array();
  auto rules = script_.find("rules");
  for (const auto& rule : rules != script_.end() ? *rules : kNone) {
    bool ok = true;
    auto needles = rule.find("contains");
    for (const auto& needle : needles != rule.end() ? *needles : kNone)
      if (text.find(needle.get<std::string>()) == std::string::npos) ok = false;
    if (ok && rule.contains("seed")) ok = req.seed && *req.seed == rule["seed"].get<std::uint64_t>();
    if (ok) {
      replies = &rule.at("replies");
      break;
    }
  }
  json reply;
  if (replies && !replies->empty()) {
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(count_assistant_turns(req)), replies->size() - 1);
    reply = (*replies)[idx];
  } else if (script_.contains("default")) {
    reply = script_["default"];
  } else {
    throw EndpointError("scripted endpoint: no rule matches request", 404);
  }
  ChatResponse out;
  out.finish_reason = "stop";
  if (reply.is_string()) {
    out.content = reply.get<std::string>();
  } else {
    if (reply.contains("error")) throw EndpointError(reply["error"].get<std::string>(), reply.value("status", 503));
    out.content = reply.value("content", "");
    out.latency_s = reply.value("latency_s", 0.0);
    out.finish_reason = reply.value("finish_reason", "stop");
    if (reply.contains("completion_tokens")) {
      out.usage.completion_tokens = reply["completion_tokens"].get<int>();
      out.usage.prompt_tokens = reply.value("prompt_tokens", 0);
      out.usage.reported = true;
    }
  }
  ensure_usage(out, req);
  return out;
}

ChatResponse ScriptedChatEndpoint::stream(const ChatRequest& req, const DeltaCallback& on_delta) {
  auto resp = complete(req);
  // Deliver in small chunks so stop detection sees partial tags.
  constexpr std::size_t kChunk = 16;
  for (std::size_t i = 0; i < resp.content.size(); i += kChunk) {
    if (!on_delta(std::string_view(resp.content).substr(i, kChunk))) {
      resp.finish_reason = "stopped";
      break;
    }
  }
  return resp;
}

EndpointPtr make_text_endpoint(std::function<std::string(const std::string&)> fn) {
  return std::make_shared<FunctionEndpoint>([fn = std::move(fn)](const ChatRequest& req) {
    ChatResponse out;
    out.content = fn(request_text(req));
    out.finish_reason = "stop";
    ensure_usage(out, req);
    return out;
  });
}

// ---- rate limiting -----------------------------------------------------------

RateLimitedEndpoint::RateLimitedEndpoint(EndpointPtr inner, std::chrono::milliseconds min_interval)
    : inner_(std::move(inner)), min_interval_(min_interval) {}

void RateLimitedEndpoint::wait_turn() {
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_slot_);
    next_slot_ = slot + min_interval_;
  }
  std::this_thread::sleep_until(slot);
}

ChatResponse RateLimitedEndpoint::complete(const ChatRequest& req) {
  wait_turn();
  return inner_->complete(req);
}

ChatResponse RateLimitedEndpoint::stream(const ChatRequest& req, const DeltaCallback& on_delta) {
  wait_turn();
  return inner_->stream(req, on_delta);
}

}  // namespace mmagent::llm
