#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace forgecap::http {

struct Endpoint {
  std::string origin;     // scheme://host[:port]
  std::string base_path;  // "" or "/v1", never with a trailing slash
};

// Accepts "http://host:port/base" or "https://...". Throws Config otherwise.
Endpoint parse_endpoint(std::string_view url);

// POSTs a JSON body to origin + base_path + path and returns the response
// body. Connection failures and 5xx map to Unreachable, elapsed >= timeout to
// Timeout, 4xx to BackendProtocol.
std::string post_json(const Endpoint& endpoint, std::string_view path, const std::string& body,
                      std::chrono::duration<double> timeout);

}  // namespace forgecap::http
