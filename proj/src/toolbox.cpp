#include "mmagent/toolbox.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <regex>

#include "mmagent/prompts.hpp"

namespace mmagent::toolbox {

namespace fs = std::filesystem;
using protocol::CodeEntry;
using protocol::ErrorEntry;
using protocol::Observation;
using protocol::PageEntry;
using protocol::SearchEntry;
using protocol::ToolName;

namespace {

bool is_image_ext(const fs::path& p) {
  auto ext = to_lower(p.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".webp" || ext == ".bmp" || ext == ".gif" ||
         ext == ".tif" || ext == ".tiff";
}

std::optional<fs::path> relative_inside(const fs::path& p, const fs::path& workspace) {
  std::error_code ec;
  auto root = fs::weakly_canonical(workspace, ec);
  if (ec) return std::nullopt;
  auto full = fs::weakly_canonical(p.is_absolute() ? p : workspace / p, ec);
  if (ec) return std::nullopt;
  auto rel = full.lexically_relative(root);
  if (rel.empty() || !is_contained_relative(rel)) return std::nullopt;
  return rel;
}

void append_hits(Observation& obs, const std::vector<SearchHit>& hits, const std::string& group) {
  for (const auto& h : hits) obs.entries.push_back(SearchEntry{h.title, h.link, h.snippet, h.image, group});
}

std::string decode_entities(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out += s[i];
      continue;
    }
    auto semi = s.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) {
      out += '&';
      continue;
    }
    auto ent = s.substr(i + 1, semi - i - 1);
    std::string rep;
    if (ent == "amp") rep = "&";
    else if (ent == "lt") rep = "<";
    else if (ent == "gt") rep = ">";
    else if (ent == "quot") rep = "\"";
    else if (ent == "apos" || ent == "#39") rep = "'";
    else if (ent == "nbsp") rep = " ";
    else if (!ent.empty() && ent[0] == '#') {
      unsigned long cp = 0;
      try {
        cp = (ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X')) ? std::stoul(std::string(ent.substr(2)), nullptr, 16)
                                                                  : std::stoul(std::string(ent.substr(1)));
      } catch (...) {
        cp = 0;
      }
      if (cp > 0 && cp < 0x80) rep = std::string(1, static_cast<char>(cp));
      else if (cp >= 0x80 && cp < 0x800) {
        rep += static_cast<char>(0xC0 | (cp >> 6));
        rep += static_cast<char>(0x80 | (cp & 0x3F));
      } else if (cp >= 0x800 && cp < 0x10000) {
        rep += static_cast<char>(0xE0 | (cp >> 12));
        rep += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        rep += static_cast<char>(0x80 | (cp & 0x3F));
      }
    }
    if (rep.empty()) {
      out += '&';
      continue;
    }
    out += rep;
    i = semi;
  }
  return out;
}

bool looks_like_html(const http::Response& resp) {
  if (contains_ci(resp.content_type, "html")) return true;
  auto t = trim(std::string_view(resp.body).substr(0, 512));
  return starts_with(t, "<");
}

}  // namespace

// ---- pages -----------------------------------------------------------------------

http::Response HttpPageFetcher::fetch(const std::string& url) { return http::get(url, {}, timeout_s_); }

http::Response FixturePageFetcher::fetch(const std::string& url) {
  http::Response r;
  auto it = pages_.find(url);
  if (it == pages_.end()) {
    r.status = 404;
    return r;
  }
  if (it->is_string()) {
    r.status = 200;
    r.body = it->get<std::string>();
    r.content_type = "text/html";
    return r;
  }
  r.status = it->value("status", 200);
  r.body = it->value("body", "");
  r.content_type = it->value("content_type", "text/html");
  return r;
}

std::string html_to_text(std::string_view html) {
  static const std::regex kDrop(R"(<(script|style|noscript|head)\b[^>]*>[\s\S]*?</\1\s*>)", std::regex::icase);
  static const std::regex kComment(R"(<!--[\s\S]*?-->)");
  static const std::regex kBlock(R"(<\s*/?\s*(p|br|div|li|ul|ol|tr|h[1-6]|section|article|table|header|footer|title)\b[^>]*>)",
                                 std::regex::icase);
  static const std::regex kTag(R"(<[^>]*>)");
  std::string s(html);
  s = std::regex_replace(s, kComment, " ");
  s = std::regex_replace(s, kDrop, " ");
  s = std::regex_replace(s, kBlock, "\n");
  s = std::regex_replace(s, kTag, " ");
  s = decode_entities(s);
  std::string out;
  for (const auto& line : split_lines(s)) {
    auto c = collapse_whitespace(line);
    if (c.empty()) continue;
    if (!out.empty()) out += '\n';
    out += c;
  }
  return out;
}

PageContent reduce_page(const std::string& url, const http::Response& resp, llm::ChatEndpoint* summarizer,
                        std::size_t threshold) {
  PageContent page;
  page.url = url;
  page.fetch_status = resp.status;
  page.raw_text = looks_like_html(resp) ? html_to_text(resp.body) : trim(resp.body);
  page.raw_length = page.raw_text.size();
  if (page.raw_length <= threshold) return page;
  if (summarizer) {
    llm::ChatRequest req;
    req.temperature = 0.0;
    req.messages.push_back(
        {"user", prompts::fill(prompts::kSummarizer, {{"url", url}, {"content", page.raw_text}}), {}});
    try {
      auto reply = trim(summarizer->complete(req).content);
      if (!reply.empty()) {
        page.summarized_text = reply;
        page.was_summarized = true;
        return page;
      }
    } catch (const llm::EndpointError& e) {
      log_warn("summarizer unavailable for " + url + ": " + e.what());
    }
  }
  page.was_truncated = true;
  return page;
}

// ---- tools -----------------------------------------------------------------------

fs::path resolve_image(const std::string& path, const fs::path& workspace) {
  if (is_blank(path)) throw ToolInputError(ToolInputError::Kind::MissingImage, "empty image path");
  auto rel = relative_inside(fs::path(path), workspace);
  if (!rel) throw ToolInputError(ToolInputError::Kind::MissingImage, "image is outside the workspace: " + path);
  auto full = workspace / *rel;
  std::error_code ec;
  if (!fs::is_regular_file(full, ec) || !is_image_ext(full))
    throw ToolInputError(ToolInputError::Kind::MissingImage, "image not found: " + path);
  return full;
}

Observation image_search(const std::vector<std::string>& image_paths, const fs::path& workspace,
                         SearchProvider& provider, int limit) {
  std::vector<fs::path> resolved;
  for (const auto& p : image_paths) resolved.push_back(resolve_image(p, workspace));
  Observation obs;
  for (std::size_t i = 0; i < resolved.size(); ++i) {
    try {
      append_hits(obs, provider.lens(resolved[i].string(), limit), image_paths[i]);
    } catch (const ProviderUnavailable& e) {
      obs.entries.push_back(ErrorEntry{e.what(), image_paths[i]});
    }
  }
  return obs;
}

Observation text_search(const std::vector<std::string>& queries, SearchProvider& provider, int limit) {
  for (const auto& q : queries)
    if (is_blank(q)) throw ToolInputError(ToolInputError::Kind::EmptyQuery, "empty search query");
  Observation obs;
  for (const auto& q : queries) {
    auto query = trim(q);
    try {
      append_hits(obs, provider.search(query, limit), query);
    } catch (const ProviderUnavailable& e) {
      obs.entries.push_back(ErrorEntry{e.what(), query});
    }
  }
  return obs;
}

Observation web_visit(const std::vector<std::string>& urls, PageFetcher& fetcher, llm::ChatEndpoint* summarizer,
                      std::size_t threshold) {
  for (const auto& u : urls) {
    http::Url parsed;
    if (!http::parse_url(trim(u), parsed)) throw ToolInputError(ToolInputError::Kind::BadUrl, "invalid url: " + u);
  }
  Observation obs;
  for (const auto& raw : urls) {
    auto url = trim(raw);
    auto resp = fetcher.fetch(url);
    if (resp.status != 200) {
      std::string why = resp.status == 0 ? resp.error : "HTTP " + std::to_string(resp.status);
      obs.entries.push_back(ErrorEntry{"failed to fetch " + url + ": " + why, url});
      continue;
    }
    auto page = reduce_page(url, resp, summarizer, threshold);
    PageEntry e;
    e.url = url;
    e.raw_length = page.raw_length;
    e.was_summarized = page.was_summarized;
    e.was_truncated = page.was_truncated;
    if (page.was_summarized)
      e.content = *page.summarized_text;
    else if (page.was_truncated)
      e.content = page.raw_text.substr(0, threshold) + "\n[truncated: " + std::to_string(threshold) + " of " +
                  std::to_string(page.raw_length) + " characters shown]";
    else
      e.content = page.raw_text;
    obs.entries.push_back(std::move(e));
  }
  return obs;
}

std::vector<std::string> filter_produced(const std::vector<std::string>& reported, const std::string& stdout_text,
                                         const fs::path& workspace) {
  std::vector<std::string> out;
  auto accept = [&](const std::string& p) {
    auto rel = relative_inside(fs::path(p), workspace);
    if (!rel || !is_image_ext(*rel)) return;
    std::error_code ec;
    if (!fs::is_regular_file(workspace / *rel, ec)) return;
    auto s = rel->generic_string();
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  };
  for (const auto& p : reported) accept(p);
  if (out.empty()) {
    static const std::regex kPath(R"(([\w./\-]+\.(?:png|jpg|jpeg|webp|bmp|gif|tif|tiff))\b)", std::regex::icase);
    for (std::sregex_iterator it(stdout_text.begin(), stdout_text.end(), kPath), end; it != end; ++it)
      accept((*it)[1].str());
  }
  return out;
}

CodeResult execute_code(const std::string& code, const fs::path& workspace, SandboxClient& sandbox,
                        const SandboxSettings& settings) {
  if (is_blank(code)) throw ToolInputError(ToolInputError::Kind::EmptyCode, "empty code");
  std::error_code ec;
  if (!fs::is_directory(workspace, ec))
    throw ToolInputError(ToolInputError::Kind::BadWorkspace, "workspace does not exist: " + workspace.string());
  ExecRequest req;
  req.code = code;
  req.workspace = fs::absolute(workspace).string();
  req.timeout_s = settings.timeout_s;
  req.memory_limit = settings.memory_limit;
  req.allowed_imports_policy = settings.policy;
  auto resp = sandbox.execute(req);
  CodeResult out;
  out.stdout_text = resp.stdout_text;
  out.stderr_text = resp.stderr_text;
  out.exit_status = resp.exit_status;
  out.timed_out = resp.timed_out;
  out.wall_time = std::min(resp.wall_time, settings.timeout_s);
  if (out.timed_out) {
    if (out.exit_status == 0) out.exit_status = 124;
    if (out.stderr_text.find("timed out") == std::string::npos) {
      if (!out.stderr_text.empty() && out.stderr_text.back() != '\n') out.stderr_text += '\n';
      out.stderr_text += "sandbox: execution timed out";
    }
  }
  out.produced_images = filter_produced(resp.produced_files, resp.stdout_text, workspace);
  return out;
}

// ---- registry --------------------------------------------------------------------

ToolRegistry::ToolRegistry(ToolboxConfig cfg, SearchProviderPtr search, PageFetcherPtr fetcher, SandboxPtr sandbox,
                           llm::EndpointPtr summarizer, std::shared_ptr<TranscriptCache> transcript,
                           fs::path workspace_root)
    : cfg_(std::move(cfg)),
      search_(std::move(search)),
      fetcher_(std::move(fetcher)),
      sandbox_(std::move(sandbox)),
      summarizer_(std::move(summarizer)),
      transcript_(std::move(transcript)),
      workspace_root_(std::move(workspace_root)) {}

std::mutex& ToolRegistry::workspace_mutex(const fs::path& workspace) {
  std::lock_guard lock(map_mu_);
  auto& slot = ws_mu_[fs::absolute(workspace).lexically_normal().string()];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::string ToolRegistry::args_canonical(const protocol::ToolCall& call, const fs::path& workspace) const {
  json j = protocol::to_json(call)["arguments"];
  if (call.name == ToolName::Code) {
    auto scope = workspace_root_.empty() ? workspace.filename() : workspace.lexically_relative(workspace_root_);
    j["workspace"] = scope.generic_string();
  }
  return dump_json(j);
}

Observation ToolRegistry::run_live(const protocol::ToolCall& call, const fs::path& workspace,
                                   int first_image_number) {
  const int limit = cfg_.search.result_limit;
  try {
    switch (call.name) {
      case ToolName::ImageSearch:
        if (!search_) return Observation{{ErrorEntry{"image search is not configured", ""}}};
        return image_search(call.values, workspace, *search_, limit);
      case ToolName::TextSearch:
        if (!search_) return Observation{{ErrorEntry{"text search is not configured", ""}}};
        return text_search(call.values, *search_, limit);
      case ToolName::WebVisit:
        if (!fetcher_) return Observation{{ErrorEntry{"web visit is not configured", ""}}};
        return web_visit(call.values, *fetcher_, summarizer_.get(), cfg_.summarize_threshold);
      case ToolName::Code: {
        if (!sandbox_) throw SandboxUnreachable("no sandbox configured");
        std::lock_guard lock(workspace_mutex(workspace));
        auto r = execute_code(call.code, workspace, *sandbox_, cfg_.sandbox);
        CodeEntry e;
        e.stdout_text = r.stdout_text;
        e.stderr_text = r.stderr_text;
        e.exit_status = r.exit_status;
        e.produced_images = r.produced_images;
        e.first_image_number = first_image_number;
        e.wall_time_s = r.wall_time;
        e.timed_out = r.timed_out;
        return Observation{{e}};
      }
    }
  } catch (const ToolInputError& e) {
    return Observation{{ErrorEntry{e.what(), ""}}};
  }
  return {};
}

DispatchResult ToolRegistry::dispatch(const protocol::ToolCall& call, const fs::path& workspace,
                                      int first_image_number) {
  const std::string tool(protocol::tool_name_str(call.name));
  const bool use_transcript = transcript_ && transcript_->mode() != TranscriptMode::Off;
  std::string key;
  if (use_transcript) key = args_canonical(call, workspace);

  if (use_transcript && transcript_->mode() == TranscriptMode::Replay) {
    auto resp = transcript_->require(tool, key);
    DispatchResult out;
    out.observation = protocol::observation_from_json(resp.at("observation"));
    out.elapsed_s = resp.value("elapsed_s", 0.0);
    if (auto files = resp.find("files"); files != resp.end()) {
      for (const auto& [rel, b64] : files->items()) {
        if (!is_contained_relative(rel)) continue;
        auto target = workspace / rel;
        if (!fs::exists(target)) write_file(target, base64_decode(b64.get<std::string>()));
      }
    }
    for (auto& e : out.observation.entries)
      if (auto* c = std::get_if<CodeEntry>(&e)) c->first_image_number = first_image_number;
    return out;
  }

  const auto start = std::chrono::steady_clock::now();
  DispatchResult out;
  out.observation = run_live(call, workspace, first_image_number);
  out.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (use_transcript) {
    json resp = {{"observation", protocol::to_json(out.observation)}, {"elapsed_s", out.elapsed_s}};
    if (const auto* c = out.observation.code(); c && !c->produced_images.empty()) {
      json files = json::object();
      for (const auto& rel : c->produced_images) files[rel] = base64_encode(read_file(workspace / rel));
      resp["files"] = files;
    }
    transcript_->record(tool, key, resp);
  }
  return out;
}

}  // namespace mmagent::toolbox
