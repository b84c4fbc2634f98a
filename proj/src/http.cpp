#include "mmagent/http.hpp"

#include <httplib.h>

#include <charconv>

namespace mmagent::http {

namespace {

httplib::Headers to_headers(const Headers& headers) {
  httplib::Headers out;
  for (const auto& [k, v] : headers) out.emplace(k, v);
  return out;
}

std::unique_ptr<httplib::Client> make_client(const Url& url, double timeout_s) {
  auto client = std::make_unique<httplib::Client>(url.origin());
  const auto sec = static_cast<time_t>(timeout_s);
  const auto usec = static_cast<time_t>((timeout_s - static_cast<double>(sec)) * 1e6);
  client->set_connection_timeout(sec, usec);
  client->set_read_timeout(sec, usec);
  client->set_write_timeout(sec, usec);
  client->set_follow_location(true);
  return client;
}

Response from_result(const httplib::Result& res) {
  Response out;
  if (!res) {
    out.error = httplib::to_string(res.error());
    out.read_failed = res.error() == httplib::Error::Read;
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  out.content_type = res->get_header_value("Content-Type");
  return out;
}

}  // namespace

std::string Url::origin() const { return scheme + "://" + host + ":" + std::to_string(port); }

bool parse_url(std::string_view text, Url& out) {
  auto sep = text.find("://");
  if (sep == std::string_view::npos) return false;
  out.scheme = std::string(text.substr(0, sep));
  if (out.scheme != "http" && out.scheme != "https") return false;
  auto rest = text.substr(sep + 3);
  auto slash = rest.find_first_of("/?#");
  auto authority = rest.substr(0, slash);
  out.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  if (!out.path.empty() && out.path[0] != '/') out.path = "/" + out.path;
  if (authority.empty() || authority.find_first_of(" \t\r\n@") != std::string_view::npos) return false;
  auto colon = authority.rfind(':');
  if (colon != std::string_view::npos && authority.find(']') == std::string_view::npos) {
    int port = 0;
    auto p = authority.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), port);
    if (ec != std::errc{} || ptr != p.data() + p.size() || port <= 0 || port > 65535) return false;
    out.port = port;
    out.host = std::string(authority.substr(0, colon));
  } else {
    out.host = std::string(authority);
    out.port = out.scheme == "https" ? 443 : 80;
  }
  return !out.host.empty();
}

Response get(const std::string& url, const Headers& headers, double timeout_s) {
  Url u;
  if (!parse_url(url, u)) return Response{0, {}, {}, "invalid url"};
  auto client = make_client(u, timeout_s);
  return from_result(client->Get(u.path, to_headers(headers)));
}

Response post_json(const std::string& url, const std::string& body, const Headers& headers,
                   double timeout_s) {
  Url u;
  if (!parse_url(url, u)) return Response{0, {}, {}, "invalid url"};
  auto client = make_client(u, timeout_s);
  return from_result(client->Post(u.path, to_headers(headers), body, "application/json"));
}

Response post_stream(const std::string& url, const std::string& body, const Headers& headers,
                     double timeout_s, const std::function<bool(std::string_view)>& on_chunk) {
  Url u;
  if (!parse_url(url, u)) return Response{0, {}, {}, "invalid url"};
  auto client = make_client(u, timeout_s);
  httplib::Request req;
  req.method = "POST";
  req.path = u.path;
  req.headers = to_headers(headers);
  req.headers.emplace("Content-Type", "application/json");
  req.body = body;
  Response out;
  bool aborted = false;
  req.response_handler = [&](const httplib::Response& r) {
    out.status = r.status;
    out.content_type = r.get_header_value("Content-Type");
    return true;
  };
  req.content_receiver = [&](const char* data, size_t len, uint64_t, uint64_t) {
    if (out.status >= 400) {
      out.body.append(data, len);
      return true;
    }
    if (!on_chunk(std::string_view(data, len))) {
      aborted = true;
      return false;
    }
    return true;
  };
  auto res = client->send(req);
  if (!res && !aborted) {
    out.status = 0;
    out.error = httplib::to_string(res.error());
    out.read_failed = res.error() == httplib::Error::Read;
  }
  return out;
}

}  // namespace mmagent::http
