#include "http_endpoint.hpp"

#include <httplib.h>

#include "forgecap/error.hpp"

namespace forgecap::http {

Endpoint parse_endpoint(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos)
    throw Error(Errc::Config, "endpoint must start with http:// or https://: " + std::string(url));
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https")
    throw Error(Errc::Config, "unsupported endpoint scheme: " + std::string(scheme));
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = std::string(url.substr(0, path_start));
  if (ep.origin.size() == scheme_end + 3) throw Error(Errc::Config, "endpoint has no host: " + std::string(url));
  if (path_start != std::string_view::npos) {
    ep.base_path = std::string(url.substr(path_start));
    while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
  }
  return ep;
}

std::string post_json(const Endpoint& endpoint, std::string_view path, const std::string& body,
                      std::chrono::duration<double> timeout) {
  httplib::Client client(endpoint.origin);
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  client.set_connection_timeout(us);
  client.set_read_timeout(us);
  client.set_write_timeout(us);

  const std::string target = endpoint.base_path + std::string(path);
  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(target, body, "application/json");
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

  if (!res) {
    const auto err = res.error();
    const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                           (err == httplib::Error::Read && elapsed >= timeout * 0.95);
    throw Error(timed_out ? Errc::Timeout : Errc::Unreachable,
                endpoint.origin + target + ": " + httplib::to_string(err));
  }
  if (res->status >= 500)
    throw Error(Errc::Unreachable, endpoint.origin + target + " returned HTTP " + std::to_string(res->status));
  if (res->status != 200)
    throw Error(Errc::BackendProtocol,
                endpoint.origin + target + " returned HTTP " + std::to_string(res->status) + ": " + res->body);
  return res->body;
}

}  // namespace forgecap::http
