#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "forgecap/manifest.hpp"

namespace forgecap {

using Seconds = std::chrono::duration<double>;

enum class BackendKind { Remote, Scripted };

struct BackendConfig {
  BackendKind kind = BackendKind::Scripted;
  std::optional<std::string> endpoint;  // e.g. "http://127.0.0.1:8000/v1"
  std::string model_name = "default";
  Seconds timeout{60.0};
  unsigned max_parallel = 1;
  std::optional<std::filesystem::path> script_path;

  // Throws Config when kind and endpoint/script_path disagree or max_parallel is 0.
  void validate() const;
};

struct ModelReply {
  std::string text;
  std::optional<double> fake_probability;  // in [0,1] when present
  Seconds latency{0.0};
};

enum class YesNo { Yes, No, Invalid };

std::string_view to_string(YesNo answer) noexcept;
YesNo parse_yes_no(std::string_view s);  // inverse of to_string

// First alphabetic token decides: "yes" -> Yes, "no" -> No, else Invalid.
// Case-insensitive; leading whitespace and punctuation are skipped.
YesNo normalize_yes_no(std::string_view text);

// SHA-256 hex of the exact prompt bytes. Scripted fixtures are keyed by it.
std::string prompt_key(std::string_view prompt);

// Text-only requests (question generation, summarization) carry this image id.
inline constexpr std::string_view kTextOnlyImageId = "";

class Backend {
 public:
  virtual ~Backend() = default;

  // Asks one question about one image. Implementations must be safe to call
  // concurrently.
  virtual ModelReply ask(const ImageRecord& image, std::string_view prompt) const = 0;

  // Text-only completion, used for teacher-model tasks.
  virtual ModelReply complete(std::string_view prompt) const = 0;

  virtual std::string identity() const = 0;
};

// Fixture-driven backend. A pure function of (image_id, prompt_key); a lookup
// miss is a ScriptMiss error (a fixture gap, not a model failure).
class ScriptedBackend final : public Backend {
 public:
  ScriptedBackend() = default;
  explicit ScriptedBackend(std::string name) : name_(std::move(name)) {}

  // Fixture JSONL: {"image_id", "prompt_key", "text", "fake_probability": number|null}
  static ScriptedBackend load(const std::filesystem::path& path);
  static ScriptedBackend parse(std::istream& in, std::string name);

  void add(std::string image_id, std::string_view prompt, std::string text,
           std::optional<double> fake_probability = std::nullopt);
  void add_keyed(std::string image_id, std::string key, std::string text,
                 std::optional<double> fake_probability);

  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return entries_.size(); }

  ModelReply ask(const ImageRecord& image, std::string_view prompt) const override;
  ModelReply complete(std::string_view prompt) const override;
  std::string identity() const override { return "scripted:" + name_; }

 private:
  struct Entry {
    std::string text;
    std::optional<double> fake_probability;
  };
  ModelReply lookup(std::string_view image_id, std::string_view prompt) const;

  std::string name_ = "inline";
  std::map<std::pair<std::string, std::string>, Entry> entries_;
};

// OpenAI-style chat-completions client:
//   POST {endpoint}/chat/completions
//   {"model", "messages": [{"role": "user", "content": [text, image_url]}], "temperature": 0}
// The image is sent as a base64 data URL. A top-level "fake_probability" in
// the response is honored. One retry on Timeout/Unreachable.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(BackendConfig cfg);

  ModelReply ask(const ImageRecord& image, std::string_view prompt) const override;
  ModelReply complete(std::string_view prompt) const override;
  std::string identity() const override;

 private:
  ModelReply post_with_retry(const std::string& body) const;
  ModelReply post_once(const std::string& body) const;

  BackendConfig cfg_;
};

// Decorator that memoizes replies on disk, one JSON file per
// (identity, image_id, prompt) digest.
class CachingBackend final : public Backend {
 public:
  CachingBackend(std::unique_ptr<Backend> inner, std::filesystem::path dir);

  ModelReply ask(const ImageRecord& image, std::string_view prompt) const override;
  ModelReply complete(std::string_view prompt) const override;
  std::string identity() const override { return inner_->identity(); }

 private:
  template <typename Fn>
  ModelReply cached(std::string_view image_id, std::string_view prompt, Fn&& fetch) const;

  std::unique_ptr<Backend> inner_;
  std::filesystem::path dir_;
};

// Builds the backend named by cfg. When FORGECAP_CACHE_DIR is set, remote
// backends are wrapped in a CachingBackend rooted there.
std::unique_ptr<Backend> make_backend(const BackendConfig& cfg);

// Builds the chat-completions request body. Exposed for wire-format tests.
std::string chat_request_body(std::string_view model_name, std::string_view prompt,
                              std::optional<std::string_view> image_data_url);

// "data:image/jpeg;base64,..." for the file at path (mime type from extension).
std::string image_data_url(const std::filesystem::path& path);

}  // namespace forgecap
