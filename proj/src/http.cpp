#include "lemmaforge/http.hpp"

#include <httplib.h>

#include <fmt/format.h>

namespace lemmaforge::http {

Endpoint parse_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos || url.substr(0, scheme_end) != "http")
    throw ConfigError(fmt::format("unsupported endpoint '{}' (expected http://host:port/path)", url));
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.base = std::string(url.substr(0, path_start));
  e.path = path_start == std::string_view::npos ? "/" : std::string(url.substr(path_start));
  if (e.base.size() <= scheme_end + 3) throw ConfigError(fmt::format("endpoint '{}' has no host", url));
  return e;
}

json post_json(const Endpoint& endpoint, const json& body, std::chrono::seconds timeout) {
  httplib::Client client(endpoint.base);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  auto res = client.Post(endpoint.path, body.dump(), "application/json");
  if (!res)
    throw InfrastructureError(fmt::format("POST {}{} failed: {}", endpoint.base, endpoint.path,
                                          httplib::to_string(res.error())));
  if (res->status < 200 || res->status >= 300)
    throw InfrastructureError(
        fmt::format("POST {}{} returned HTTP {}", endpoint.base, endpoint.path, res->status));
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw InfrastructureError(
        fmt::format("POST {}{} returned non-JSON body: {}", endpoint.base, endpoint.path, e.what()));
  }
}

}  // namespace lemmaforge::http
