#pragma once

// The four agent tools behind one registry. Every tool returns an Observation;
// provider and fetch failures become error entries so episodes keep going.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmagent/http.hpp"
#include "mmagent/llm.hpp"
#include "mmagent/protocol.hpp"
#include "mmagent/sandbox_client.hpp"
#include "mmagent/search_provider.hpp"
#include "mmagent/transcript.hpp"

namespace mmagent::toolbox {

/// Precondition violations detected before anything is dispatched.
class ToolInputError : public std::runtime_error {
 public:
  enum class Kind { MissingImage, EmptyQuery, BadUrl, EmptyCode, BadWorkspace };
  ToolInputError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// ---- web pages ------------------------------------------------------------------

struct PageContent {
  std::string url;
  std::string raw_text;
  std::optional<std::string> summarized_text;
  bool was_summarized = false;
  bool was_truncated = false;
  std::size_t raw_length = 0;
  int fetch_status = 0;
};

class PageFetcher {
 public:
  virtual ~PageFetcher() = default;
  virtual http::Response fetch(const std::string& url) = 0;
};

using PageFetcherPtr = std::shared_ptr<PageFetcher>;

class HttpPageFetcher : public PageFetcher {
 public:
  explicit HttpPageFetcher(double timeout_s = 20.0) : timeout_s_(timeout_s) {}
  http::Response fetch(const std::string& url) override;

 private:
  double timeout_s_;
};

/// {"<url>": "<html>" | {"status": 404, "body": "..."}}. Unknown URLs are 404.
class FixturePageFetcher : public PageFetcher {
 public:
  explicit FixturePageFetcher(json pages) : pages_(std::move(pages)) {}
  http::Response fetch(const std::string& url) override;

 private:
  json pages_;
};

/// Readable text from HTML: drops script/style, breaks at block tags, decodes
/// common entities, drops blank lines.
std::string html_to_text(std::string_view html);

/// Reduces a fetched body to text and applies the summarization threshold.
/// Without a usable summarizer the text is cut at `threshold` with a marker.
PageContent reduce_page(const std::string& url, const http::Response& resp, llm::ChatEndpoint* summarizer,
                        std::size_t threshold);

// ---- tools -----------------------------------------------------------------------

struct CodeResult {
  std::string stdout_text;
  std::string stderr_text;
  int exit_status = 0;
  std::vector<std::string> produced_images;  // workspace-relative
  double wall_time = 0.0;
  bool timed_out = false;
};

struct SandboxSettings {
  double timeout_s = 30.0;
  std::int64_t memory_limit = 2LL << 30;
  ImportPolicy policy = ImportPolicy::ImagingOnly;
};

/// Image path as seen by the model, resolved inside `workspace`. Throws
/// ToolInputError(MissingImage).
std::filesystem::path resolve_image(const std::string& path, const std::filesystem::path& workspace);

protocol::Observation image_search(const std::vector<std::string>& image_paths,
                                   const std::filesystem::path& workspace, SearchProvider& provider, int limit);
protocol::Observation text_search(const std::vector<std::string>& queries, SearchProvider& provider, int limit);
protocol::Observation web_visit(const std::vector<std::string>& urls, PageFetcher& fetcher,
                                llm::ChatEndpoint* summarizer, std::size_t threshold);
/// Runs code in the sandbox. Throws SandboxUnreachable; timeouts come back as
/// a CodeResult with the marker in stderr.
CodeResult execute_code(const std::string& code, const std::filesystem::path& workspace, SandboxClient& sandbox,
                        const SandboxSettings& settings);

/// Images a code run actually produced: inside the workspace, existing, image
/// extension. Falls back to image paths printed on stdout when the worker
/// reported none.
std::vector<std::string> filter_produced(const std::vector<std::string>& reported, const std::string& stdout_text,
                                         const std::filesystem::path& workspace);

// ---- registry --------------------------------------------------------------------

struct ToolboxConfig {
  SearchProviderConfig search;
  std::size_t summarize_threshold = 4000;
  SandboxSettings sandbox;
};

struct DispatchResult {
  protocol::Observation observation;
  double elapsed_s = 0.0;
};

/// Thread-safe across episodes. Code runs are serialized per workspace.
class ToolRegistry {
 public:
  ToolRegistry(ToolboxConfig cfg, SearchProviderPtr search, PageFetcherPtr fetcher, SandboxPtr sandbox,
               llm::EndpointPtr summarizer, std::shared_ptr<TranscriptCache> transcript = nullptr,
               std::filesystem::path workspace_root = {});

  /// Runs one tool call. `first_image_number` numbers produced images in the
  /// rendered observation. Input errors and provider failures come back as
  /// error entries; SandboxUnreachable and TranscriptMiss propagate.
  DispatchResult dispatch(const protocol::ToolCall& call, const std::filesystem::path& workspace,
                          int first_image_number);

  /// Transcript key for a call: canonical JSON of the arguments, with the
  /// workspace (relative to the root) for code.
  std::string args_canonical(const protocol::ToolCall& call, const std::filesystem::path& workspace) const;

  const ToolboxConfig& config() const { return cfg_; }

 private:
  protocol::Observation run_live(const protocol::ToolCall& call, const std::filesystem::path& workspace,
                                 int first_image_number);
  std::mutex& workspace_mutex(const std::filesystem::path& workspace);

  ToolboxConfig cfg_;
  SearchProviderPtr search_;
  PageFetcherPtr fetcher_;
  SandboxPtr sandbox_;
  llm::EndpointPtr summarizer_;
  std::shared_ptr<TranscriptCache> transcript_;
  std::filesystem::path workspace_root_;
  std::mutex map_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> ws_mu_;
};

}  // namespace mmagent::toolbox
