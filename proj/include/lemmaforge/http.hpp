#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include "lemmaforge/common.hpp"

namespace lemmaforge::http {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // starts with '/'
};

/// Splits "http://host:port/path". Throws ConfigError on anything else.
Endpoint parse_url(std::string_view url);

/// POSTs a JSON body and returns the parsed JSON reply. Transport failures,
/// non-2xx statuses and non-JSON replies throw InfrastructureError.
json post_json(const Endpoint& endpoint, const json& body,
               std::chrono::seconds timeout = std::chrono::seconds(600));

}  // namespace lemmaforge::http
