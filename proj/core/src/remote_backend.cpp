#include <fstream>
#include <iterator>

#include <json.hpp>

#include "forgecap/backend.hpp"
#include "forgecap/digest.hpp"
#include "forgecap/error.hpp"
#include "http_endpoint.hpp"
#include "text.hpp"

namespace forgecap {

using nlohmann::ordered_json;

std::string chat_request_body(std::string_view model_name, std::string_view prompt,
                              std::optional<std::string_view> image_data_url) {
  ordered_json content = ordered_json::array();
  content.push_back({{"type", "text"}, {"text", prompt}});
  if (image_data_url)
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", *image_data_url}}}});
  ordered_json body;
  body["model"] = model_name;
  body["messages"] = ordered_json::array({{{"role", "user"}, {"content", std::move(content)}}});
  body["temperature"] = 0;
  return body.dump();
}

std::string image_data_url(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read image " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), {}};
  const std::string ext = text::to_lower(path.extension().string());
  std::string_view mime = "image/jpeg";
  if (ext == ".png") mime = "image/png";
  else if (ext == ".webp") mime = "image/webp";
  else if (ext == ".bmp") mime = "image/bmp";
  return "data:" + std::string(mime) + ";base64," + base64_encode(bytes);
}

RemoteBackend::RemoteBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.kind != BackendKind::Remote) throw Error(Errc::Config, "RemoteBackend needs kind=Remote");
  cfg_.validate();
  (void)http::parse_endpoint(*cfg_.endpoint);
}

std::string RemoteBackend::identity() const {
  return "remote:" + cfg_.model_name + "@" + *cfg_.endpoint;
}

ModelReply RemoteBackend::ask(const ImageRecord& image, std::string_view prompt) const {
  const std::string url = image_data_url(image.path);
  return post_with_retry(chat_request_body(cfg_.model_name, prompt, url));
}

ModelReply RemoteBackend::complete(std::string_view prompt) const {
  return post_with_retry(chat_request_body(cfg_.model_name, prompt, std::nullopt));
}

ModelReply RemoteBackend::post_with_retry(const std::string& body) const {
  try {
    return post_once(body);
  } catch (const Error& e) {
    if (e.code() != Errc::Timeout && e.code() != Errc::Unreachable) throw;
  }
  return post_once(body);
}

namespace {

std::string message_text(const ordered_json& content) {
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string out;
    for (const auto& part : content)
      if (part.is_object() && part.value("type", "") == "text") out += part.value("text", "");
    return out;
  }
  throw Error(Errc::BackendProtocol, "message content is neither string nor parts array");
}

}  // namespace

ModelReply RemoteBackend::post_once(const std::string& body) const {
  const auto endpoint = http::parse_endpoint(*cfg_.endpoint);
  const auto start = std::chrono::steady_clock::now();
  auto response = http::post_json(endpoint, "/chat/completions", body, cfg_.timeout);
  const Seconds latency = std::chrono::steady_clock::now() - start;

  ordered_json j;
  try {
    j = ordered_json::parse(response);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BackendProtocol, std::string("response is not JSON: ") + e.what());
  }
  ModelReply reply;
  reply.latency = latency;
  try {
    reply.text = message_text(j.at("choices").at(0).at("message").at("content"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BackendProtocol, std::string("missing choices[0].message.content: ") + e.what());
  }
  if (auto it = j.find("fake_probability"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw Error(Errc::BackendProtocol, "fake_probability must be a number");
    const double p = it->get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::BackendProtocol, "fake_probability outside [0,1]");
    reply.fake_probability = p;
  }
  return reply;
}

}  // namespace forgecap
