#include "mmagent/search_provider.hpp"

#include <cstdlib>

#include "mmagent/http.hpp"

namespace mmagent::toolbox {

void validate(const SearchProviderConfig& cfg) {
  if (cfg.result_limit < 1) throw ConfigError("search.result_limit must be >= 1");
  if (!(cfg.timeout_s > 0)) throw ConfigError("search.timeout_s must be > 0");
  http::Url u;
  if (!http::parse_url(cfg.endpoint, u)) throw ConfigError("search.endpoint is not an http(s) URL");
}

std::vector<SearchHit> parse_serper(const json& body, int limit) {
  std::vector<SearchHit> out;
  if (!body.is_object()) return out;
  for (const char* key : {"organic", "visual_matches", "visualMatches", "images"}) {
    auto it = body.find(key);
    if (it == body.end() || !it->is_array()) continue;
    for (const auto& item : *it) {
      if (static_cast<int>(out.size()) >= limit) return out;
      if (!item.is_object()) continue;
      SearchHit h;
      h.title = item.value("title", "");
      h.link = item.value("link", item.value("source", ""));
      h.snippet = item.value("snippet", "");
      h.image = item.value("imageUrl", item.value("thumbnailUrl", ""));
      h.width = item.value("imageWidth", 0);
      h.height = item.value("imageHeight", 0);
      if (h.title.empty() && h.link.empty()) continue;
      out.push_back(std::move(h));
    }
  }
  return out;
}

// ---- Serper --------------------------------------------------------------------

SerperProvider::SerperProvider(SearchProviderConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_); }

json SerperProvider::post(const std::string& path, const json& body) {
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (!key || !*key) throw ProviderUnavailable("environment variable " + cfg_.api_key_env + " is not set");
  std::string base = cfg_.endpoint;
  while (!base.empty() && base.back() == '/') base.pop_back();
  auto resp = http::post_json(base + path, body.dump(), {{"X-API-KEY", key}}, cfg_.timeout_s);
  if (resp.status == 0) throw ProviderUnavailable("search provider unreachable: " + resp.error);
  if (resp.status != 200)
    throw ProviderUnavailable("search provider returned HTTP " + std::to_string(resp.status), resp.status);
  auto parsed = json::parse(resp.body, nullptr, false);
  if (parsed.is_discarded()) throw ProviderUnavailable("search provider returned invalid JSON", resp.status);
  return parsed;
}

std::string SerperProvider::lens_url(const std::string& image_ref) const {
  if (starts_with(image_ref, "http://") || starts_with(image_ref, "https://")) return image_ref;
  if (!cfg_.image_host_base.empty()) {
    std::string base = cfg_.image_host_base;
    if (base.back() != '/') base += '/';
    return base + std::filesystem::path(image_ref).filename().string();
  }
  auto ext = to_lower(std::filesystem::path(image_ref).extension().string());
  std::string mime = (ext == ".jpg" || ext == ".jpeg") ? "image/jpeg" : "image/png";
  return "data:" + mime + ";base64," + base64_encode(read_file(image_ref));
}

std::vector<SearchHit> SerperProvider::lens(const std::string& image_ref, int limit) {
  return parse_serper(post("/lens", {{"url", lens_url(image_ref)}}), limit);
}

std::vector<SearchHit> SerperProvider::search(const std::string& query, int limit) {
  return parse_serper(post("/search", {{"q", query}, {"num", limit}}), limit);
}

std::vector<SearchHit> SerperProvider::images(const std::string& query, int limit) {
  return parse_serper(post("/images", {{"q", query}, {"num", limit}}), limit);
}

// ---- fixtures ------------------------------------------------------------------

FixtureProvider::FixtureProvider(json fixtures) : fixtures_(std::move(fixtures)) {}

std::shared_ptr<FixtureProvider> FixtureProvider::from_file(const std::filesystem::path& path) {
  auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("search fixture is not a JSON object: " + path.string());
  return std::make_shared<FixtureProvider>(std::move(j));
}

std::vector<SearchHit> FixtureProvider::serve(const char* kind, const std::string& key, int limit) const {
  auto table = fixtures_.find(kind);
  if (table == fixtures_.end() || !table->is_object()) return {};
  auto it = table->find(key);
  if (it == table->end()) return {};
  if (it->contains("status")) {
    int status = (*it)["status"].get<int>();
    if (status != 200) throw ProviderUnavailable("search provider returned HTTP " + std::to_string(status), status);
  }
  return parse_serper(*it, limit);
}

std::vector<SearchHit> FixtureProvider::lens(const std::string& image_ref, int limit) {
  return serve("lens", std::filesystem::path(image_ref).filename().string(), limit);
}

std::vector<SearchHit> FixtureProvider::search(const std::string& query, int limit) {
  return serve("search", query, limit);
}

std::vector<SearchHit> FixtureProvider::images(const std::string& query, int limit) {
  return serve("images", query, limit);
}

}  // namespace mmagent::toolbox
