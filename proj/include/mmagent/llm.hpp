#pragma once

// Chat-completions style model endpoints. Every model role (agent model,
// judge, VLM judge, summarizer, query-generation roles) is one of these.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmagent/util.hpp"

namespace mmagent::llm {

struct ChatMessage {
  std::string role;  // system | user | assistant | observation
  std::string content;
  std::vector<std::string> images;  // local file paths attached to this message

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  std::optional<std::uint64_t> seed;
  int max_tokens = 0;  // 0 = endpoint default
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
  bool reported = false;  // false when counts are the chars/4 estimate
};

struct ChatResponse {
  std::string content;
  Usage usage;
  double latency_s = 0.0;
  std::string finish_reason;  // "stop", "length", "stopped" (aborted by caller)
};

class EndpointError : public std::runtime_error {
 public:
  EndpointError(const std::string& what, int status = 0) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Called with each streamed text delta; return false to stop generation.
using DeltaCallback = std::function<bool(std::string_view delta)>;

class ChatEndpoint {
 public:
  virtual ~ChatEndpoint() = default;
  virtual ChatResponse complete(const ChatRequest& req) = 0;
  /// Default implementation delivers the complete reply as one delta.
  virtual ChatResponse stream(const ChatRequest& req, const DeltaCallback& on_delta);
};

using EndpointPtr = std::shared_ptr<ChatEndpoint>;

/// Concatenated text of a request, used for rule matching and prompts.
std::string request_text(const ChatRequest& req);
int count_assistant_turns(const ChatRequest& req);

// ---- HTTP (OpenAI-compatible) ------------------------------------------------

struct HttpEndpointConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8000/v1
  std::string model;
  std::string api_key_env;  // env var name; empty = no auth header
  double timeout_s = 120.0;
};

class HttpChatEndpoint : public ChatEndpoint {
 public:
  explicit HttpChatEndpoint(HttpEndpointConfig cfg);
  ChatResponse complete(const ChatRequest& req) override;
  ChatResponse stream(const ChatRequest& req, const DeltaCallback& on_delta) override;

  /// Request body as sent on the wire (images inlined as data URIs).
  json build_body(const ChatRequest& req, bool stream) const;

 private:
  std::string api_key() const;
  HttpEndpointConfig cfg_;
};

// ---- scripted / in-process ---------------------------------------------------

/// Deterministic endpoint driven by a JSON script:
///
///   {"rules": [{"contains": ["task-3"], "seed": 1,
///               "replies": ["<think>..", {"content": "..", "latency_s": 0.2}]}],
///    "default": "..."}
///
/// The first rule whose `contains` strings all occur in the request text (and
/// whose optional seed matches) is chosen; the reply index is the number of
/// assistant turns already in the request, clamped to the last reply. A reply
/// object with an "error" key raises EndpointError. Stateless, so safe to share
/// across threads.
class ScriptedChatEndpoint : public ChatEndpoint {
 public:
  explicit ScriptedChatEndpoint(json script);
  static std::shared_ptr<ScriptedChatEndpoint> from_file(const std::filesystem::path& path);

  ChatResponse complete(const ChatRequest& req) override;
  ChatResponse stream(const ChatRequest& req, const DeltaCallback& on_delta) override;

 private:
  json script_;
};

/// Wraps a plain function; handy for tests and offline role implementations.
class FunctionEndpoint : public ChatEndpoint {
 public:
  using Fn = std::function<ChatResponse(const ChatRequest&)>;
  explicit FunctionEndpoint(Fn fn) : fn_(std::move(fn)) {}
  ChatResponse complete(const ChatRequest& req) override { return fn_(req); }

 private:
  Fn fn_;
};

/// Convenience: endpoint that answers every request with fn(request text).
EndpointPtr make_text_endpoint(std::function<std::string(const std::string&)> fn);

/// Spaces calls at least `min_interval` apart across all threads sharing it.
class RateLimitedEndpoint : public ChatEndpoint {
 public:
  RateLimitedEndpoint(EndpointPtr inner, std::chrono::milliseconds min_interval);
  ChatResponse complete(const ChatRequest& req) override;
  ChatResponse stream(const ChatRequest& req, const DeltaCallback& on_delta) override;

 private:
  void wait_turn();
  EndpointPtr inner_;
  std::chrono::milliseconds min_interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_slot_{};
};

/// Fills usage with the chars/4 estimate when the endpoint did not report it.
void ensure_usage(ChatResponse& resp, const ChatRequest& req);

}  // namespace mmagent::llm
