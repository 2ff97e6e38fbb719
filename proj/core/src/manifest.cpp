#include "forgecap/manifest.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "forgecap/error.hpp"
#include "json_util.hpp"

namespace forgecap {

using nlohmann::ordered_json;

std::string_view to_string(Label label) noexcept {
  return label == Label::Real ? "real" : "fake";
}

Label parse_label(std::string_view s) {
  if (s == "real") return Label::Real;
  if (s == "fake") return Label::Fake;
  throw Error(Errc::Parse, "label must be \"real\" or \"fake\", got \"" + std::string(s) + "\"");
}

const ImageRecord* CorpusManifest::find(std::string_view image_id) const noexcept {
  for (const auto& r : records)
    if (r.image_id == image_id) return &r;
  return nullptr;
}

namespace {

ImageRecord record_from_json(const ordered_json& j) {
  ImageRecord r;
  r.image_id = json_util::required_string(j, "image_id");
  r.path = json_util::required_string(j, "path");
  r.label = parse_label(json_util::required_string(j, "label"));
  r.method = json_util::required_string(j, "method");
  if (r.image_id.empty()) throw Error(Errc::Parse, "image_id must be non-empty");
  if (r.method.empty()) throw Error(Errc::Parse, "method must be non-empty");
  if (auto it = j.find("video_id"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(Errc::Parse, "video_id must be a string or null");
    r.video_id = it->get<std::string>();
  }
  return r;
}

ordered_json record_to_json(const ImageRecord& r) {
  ordered_json j;
  j["image_id"] = r.image_id;
  j["path"] = r.path.generic_string();
  j["label"] = to_string(r.label);
  j["method"] = r.method;
  j["video_id"] = r.video_id ? ordered_json(*r.video_id) : ordered_json(nullptr);
  return j;
}

}  // namespace

CorpusManifest parse_manifest(std::istream& in, std::string name) {
  CorpusManifest m;
  m.name = std::move(name);
  std::unordered_set<std::string> seen;
  json_util::for_each_jsonl(in, [&](const ordered_json& j, std::size_t line_no) {
    ImageRecord r;
    try {
      r = record_from_json(j);
    } catch (const Error& e) {
      if (e.code() == Errc::MissingField) throw;
      throw Error(Errc::Parse, "line " + std::to_string(line_no) + ": " + e.detail());
    }
    if (!seen.insert(r.image_id).second) throw Error(Errc::DuplicateId, r.image_id);
    m.records.push_back(std::move(r));
  });
  return m;
}

CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open manifest " + path.string());
  return parse_manifest(in, path.stem().string());
}

void write_manifest(const CorpusManifest& manifest, std::ostream& out) {
  for (const auto& r : manifest.records) out << record_to_json(r).dump() << '\n';
}

void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write manifest " + path.string());
  write_manifest(manifest, out);
}

LabelSplit split_by_label(const CorpusManifest& manifest) {
  LabelSplit split;
  for (const auto& r : manifest.records)
    (r.label == Label::Real ? split.reals : split.fakes).push_back(r);
  return split;
}

void require_both_labels(const CorpusManifest& manifest) {
  bool real = false, fake = false;
  for (const auto& r : manifest.records) (r.label == Label::Real ? real : fake) = true;
  if (!real || !fake)
    throw Error(Errc::DegenerateCorpus,
                "manifest '" + manifest.name + "' needs at least one real and one fake record");
}

}  // namespace forgecap
