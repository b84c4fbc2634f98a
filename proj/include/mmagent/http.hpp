#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>

namespace mmagent::http {

struct Url {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 0;
  std::string path;  // always begins with '/'

  std::string origin() const;  // scheme://host:port
};

/// Parses absolute http(s) URLs. Returns false on anything else.
bool parse_url(std::string_view text, Url& out);

struct Response {
  int status = 0;  // 0 when the transport failed
  std::string body;
  std::string content_type;
  std::string error;  // transport error description when status == 0
  bool read_failed = false;  // connected but no complete response (read timeout)
};

using Headers = std::map<std::string, std::string>;

Response get(const std::string& url, const Headers& headers, double timeout_s);
Response post_json(const std::string& url, const std::string& body, const Headers& headers,
                   double timeout_s);

/// Streams a POST response body chunk by chunk. Returning false from `on_chunk`
/// aborts the transfer; the Response then carries whatever status was seen.
Response post_stream(const std::string& url, const std::string& body, const Headers& headers,
                     double timeout_s, const std::function<bool(std::string_view)>& on_chunk);

}  // namespace mmagent::http
