#pragma once

// Client side of the code-execution worker: POST /execute, GET /health.

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmagent/util.hpp"

namespace mmagent::toolbox {

enum class ImportPolicy { ImagingOnly, Permissive };

std::string_view import_policy_str(ImportPolicy p);
ImportPolicy import_policy_from_str(std::string_view s);

struct ExecRequest {
  std::string code;
  std::string workspace;  // absolute directory path
  double timeout_s = 30.0;
  std::int64_t memory_limit = 2LL << 30;  // bytes
  ImportPolicy allowed_imports_policy = ImportPolicy::ImagingOnly;
};

struct ExecResponse {
  std::string stdout_text;
  std::string stderr_text;
  int exit_status = 0;
  std::vector<std::string> produced_files;
  double wall_time = 0.0;
  bool timed_out = false;
};

/// Wire format: {code, workspace, timeout, memory_limit, allowed_imports_policy}.
json to_json(const ExecRequest& req);
ExecRequest exec_request_from_json(const json& j);
/// Wire format: {stdout, stderr, exit_status, produced_files, wall_time, timed_out?}.
json to_json(const ExecResponse& resp);
/// Throws DataError when a required field is missing or mistyped.
ExecResponse exec_response_from_json(const json& j);

/// The worker could not be reached or answered with garbage.
class SandboxUnreachable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SandboxClient {
 public:
  virtual ~SandboxClient() = default;
  virtual ExecResponse execute(const ExecRequest& req) = 0;
  virtual bool health() = 0;
};

using SandboxPtr = std::shared_ptr<SandboxClient>;

/// Talks to the worker over HTTP. The client waits `timeout + grace_s`; a
/// worker that is still silent by then is treated as a timeout.
class HttpSandboxClient : public SandboxClient {
 public:
  explicit HttpSandboxClient(std::string base_url, double grace_s = 0.25);
  ExecResponse execute(const ExecRequest& req) override;
  bool health() override;

 private:
  std::string base_url_;
  double grace_s_;
};

/// In-process stand-in for the worker:
///
///   {"rules": [{"contains": ["crop("], "stdout": "crop_1.png\n", "write": ["crop_1.png"],
///               "exit_status": 0, "stderr": "", "wall_time": 0.05, "timed_out": false}],
///    "default": {"stdout": ""}}
///
/// Files listed in "write" are created in the workspace as small PNGs.
class ScriptedSandbox : public SandboxClient {
 public:
  explicit ScriptedSandbox(json script);
  static std::shared_ptr<ScriptedSandbox> from_file(const std::filesystem::path& path);
  ExecResponse execute(const ExecRequest& req) override;
  bool health() override { return true; }

 private:
  json script_;
};

/// A valid 1x1 PNG, used for placeholder images.
std::string tiny_png();

}  // namespace mmagent::toolbox
