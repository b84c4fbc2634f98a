#pragma once

// Search backends: Serper-shaped HTTP provider and an offline fixture provider
// that serves the same response shapes.

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmagent/util.hpp"

namespace mmagent::toolbox {

struct SearchProviderConfig {
  std::string endpoint = "https://google.serper.dev";
  std::string api_key_env = "SERPER_API_KEY";
  int result_limit = 5;
  double timeout_s = 30.0;
  /// Public URL prefix under which workspace images are reachable; lens
  /// requests need a URL. Empty = inline data URI.
  std::string image_host_base;
};

/// Throws ConfigError naming the offending field.
void validate(const SearchProviderConfig& cfg);

/// Network, auth, quota or malformed-response failure.
class ProviderUnavailable : public std::runtime_error {
 public:
  ProviderUnavailable(const std::string& what, int status = 0) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct SearchHit {
  std::string title;
  std::string link;
  std::string snippet;
  std::string image;  // image URL when the provider returned one
  int width = 0;
  int height = 0;
};

/// Hits from a Serper-shaped body: organic, visual_matches and images arrays
/// in that order, at most `limit`.
std::vector<SearchHit> parse_serper(const json& body, int limit);

class SearchProvider {
 public:
  virtual ~SearchProvider() = default;
  /// Reverse image search. `image_ref` is a local file path or a URL.
  virtual std::vector<SearchHit> lens(const std::string& image_ref, int limit) = 0;
  virtual std::vector<SearchHit> search(const std::string& query, int limit) = 0;
  virtual std::vector<SearchHit> images(const std::string& query, int limit) = 0;
};

using SearchProviderPtr = std::shared_ptr<SearchProvider>;

class SerperProvider : public SearchProvider {
 public:
  explicit SerperProvider(SearchProviderConfig cfg);
  std::vector<SearchHit> lens(const std::string& image_ref, int limit) override;
  std::vector<SearchHit> search(const std::string& query, int limit) override;
  std::vector<SearchHit> images(const std::string& query, int limit) override;

  /// URL sent to the lens endpoint for a local path.
  std::string lens_url(const std::string& image_ref) const;

 private:
  json post(const std::string& path, const json& body);
  SearchProviderConfig cfg_;
};

/// Offline provider:
///
///   {"search": {"<query>": <serper body> | {"status": 429}},
///    "lens":   {"<image basename>": <serper body>},
///    "images": {"<query>": <serper body>}}
///
/// Unknown keys return no hits.
class FixtureProvider : public SearchProvider {
 public:
  explicit FixtureProvider(json fixtures);
  static std::shared_ptr<FixtureProvider> from_file(const std::filesystem::path& path);

  std::vector<SearchHit> lens(const std::string& image_ref, int limit) override;
  std::vector<SearchHit> search(const std::string& query, int limit) override;
  std::vector<SearchHit> images(const std::string& query, int limit) override;

 private:
  std::vector<SearchHit> serve(const char* kind, const std::string& key, int limit) const;
  json fixtures_;
};

}  // namespace mmagent::toolbox
