#include "forgecap/backend.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "forgecap/digest.hpp"
#include "forgecap/error.hpp"
#include "json_util.hpp"
#include "text.hpp"

namespace forgecap {

using nlohmann::ordered_json;

void BackendConfig::validate() const {
  if (max_parallel < 1) throw Error(Errc::Config, "max_parallel must be >= 1");
  if (timeout.count() <= 0) throw Error(Errc::Config, "timeout must be positive");
  if (kind == BackendKind::Remote && !endpoint)
    throw Error(Errc::Config, "remote backend requires an endpoint");
  if (kind == BackendKind::Scripted && !script_path)
    throw Error(Errc::Config, "scripted backend requires a fixture path");
}

std::string_view to_string(YesNo answer) noexcept {
  switch (answer) {
    case YesNo::Yes: return "yes";
    case YesNo::No: return "no";
    case YesNo::Invalid: return "invalid";
  }
  return "invalid";
}

YesNo parse_yes_no(std::string_view s) {
  if (s == "yes") return YesNo::Yes;
  if (s == "no") return YesNo::No;
  if (s == "invalid") return YesNo::Invalid;
  throw Error(Errc::Parse, "answer must be yes/no/invalid, got \"" + std::string(s) + "\"");
}

YesNo normalize_yes_no(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size() && !text::is_alpha(reply[i])) ++i;
  std::size_t j = i;
  while (j < reply.size() && text::is_alpha(reply[j])) ++j;
  const std::string token = text::to_lower(reply.substr(i, j - i));
  if (token == "yes") return YesNo::Yes;
  if (token == "no") return YesNo::No;
  return YesNo::Invalid;
}

std::string prompt_key(std::string_view prompt) { return sha256_hex(prompt); }

// --- ScriptedBackend --------------------------------------------------------

ScriptedBackend ScriptedBackend::parse(std::istream& in, std::string name) {
  ScriptedBackend backend(std::move(name));
  json_util::for_each_jsonl(in, [&](const ordered_json& j, std::size_t line_no) {
    std::optional<double> fp;
    if (auto it = j.find("fake_probability"); it != j.end() && !it->is_null()) {
      if (!it->is_number())
        throw Error(Errc::Parse, "line " + std::to_string(line_no) + ": fake_probability must be a number");
      fp = it->get<double>();
    }
    backend.add_keyed(json_util::required_string(j, "image_id"),
                      json_util::required_string(j, "prompt_key"),
                      json_util::required_string(j, "text"), fp);
  });
  return backend;
}

ScriptedBackend ScriptedBackend::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open fixture " + path.string());
  return parse(in, path.stem().string());
}

void ScriptedBackend::add(std::string image_id, std::string_view prompt, std::string text,
                          std::optional<double> fake_probability) {
  add_keyed(std::move(image_id), prompt_key(prompt), std::move(text), fake_probability);
}

void ScriptedBackend::add_keyed(std::string image_id, std::string key, std::string text,
                                std::optional<double> fake_probability) {
  if (fake_probability && !(*fake_probability >= 0.0 && *fake_probability <= 1.0))
    throw Error(Errc::InvalidArgument, "fake_probability outside [0,1] for " + image_id);
  auto [it, inserted] = entries_.try_emplace({std::move(image_id), std::move(key)},
                                             Entry{std::move(text), fake_probability});
  if (!inserted)
    throw Error(Errc::DuplicateId, it->first.first + " / " + it->first.second);
}

void ScriptedBackend::write(std::ostream& out) const {
  for (const auto& [key, entry] : entries_) {
    ordered_json j;
    j["image_id"] = key.first;
    j["prompt_key"] = key.second;
    j["text"] = entry.text;
    j["fake_probability"] =
        entry.fake_probability ? ordered_json(*entry.fake_probability) : ordered_json(nullptr);
    out << j.dump() << '\n';
  }
}

void ScriptedBackend::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write fixture " + path.string());
  write(out);
}

ModelReply ScriptedBackend::lookup(std::string_view image_id, std::string_view prompt) const {
  const std::string key = prompt_key(prompt);
  auto it = entries_.find({std::string(image_id), key});
  if (it == entries_.end())
    throw Error(Errc::ScriptMiss, "image_id=\"" + std::string(image_id) + "\" prompt_key=" + key);
  return ModelReply{it->second.text, it->second.fake_probability, Seconds{0.0}};
}

ModelReply ScriptedBackend::ask(const ImageRecord& image, std::string_view prompt) const {
  return lookup(image.image_id, prompt);
}

ModelReply ScriptedBackend::complete(std::string_view prompt) const {
  return lookup(kTextOnlyImageId, prompt);
}

// --- CachingBackend ---------------------------------------------------------

CachingBackend::CachingBackend(std::unique_ptr<Backend> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(Errc::Io, "cannot create cache dir " + dir_.string() + ": " + ec.message());
}

template <typename Fn>
ModelReply CachingBackend::cached(std::string_view image_id, std::string_view prompt,
                                  Fn&& fetch) const {
  std::string material = inner_->identity();
  material.push_back('\n');
  material.append(image_id);
  material.push_back('\n');
  material.append(prompt);
  const auto file = dir_ / (sha256_hex(material) + ".json");

  if (std::ifstream in(file); in) {
    try {
      const auto j = ordered_json::parse(in);
      ModelReply reply;
      reply.text = j.at("text").get<std::string>();
      if (const auto& fp = j.at("fake_probability"); !fp.is_null()) reply.fake_probability = fp.get<double>();
      return reply;
    } catch (const std::exception&) {
      // unreadable entry: fall through and refetch
    }
  }
  ModelReply reply = fetch();
  ordered_json j;
  j["text"] = reply.text;
  j["fake_probability"] =
      reply.fake_probability ? ordered_json(*reply.fake_probability) : ordered_json(nullptr);
  // Write-then-rename so concurrent workers never observe a torn file.
  static std::atomic<unsigned long> tmp_counter{0};
  const auto tmp = file.string() + ".tmp" + std::to_string(tmp_counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary);
    out << j.dump();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file, ec);
  if (ec) std::filesystem::remove(tmp, ec);
  return reply;
}

ModelReply CachingBackend::ask(const ImageRecord& image, std::string_view prompt) const {
  return cached(image.image_id, prompt, [&] { return inner_->ask(image, prompt); });
}

ModelReply CachingBackend::complete(std::string_view prompt) const {
  return cached(kTextOnlyImageId, prompt, [&] { return inner_->complete(prompt); });
}

// --- factory ----------------------------------------------------------------

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg) {
  cfg.validate();
  if (cfg.kind == BackendKind::Scripted)
    return std::make_unique<ScriptedBackend>(ScriptedBackend::load(*cfg.script_path));
  std::unique_ptr<Backend> remote = std::make_unique<RemoteBackend>(cfg);
  if (const char* dir = std::getenv("FORGECAP_CACHE_DIR"); dir && *dir)
    return std::make_unique<CachingBackend>(std::move(remote), dir);
  return remote;
}

}  // namespace forgecap
