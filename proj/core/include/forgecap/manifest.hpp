#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace forgecap {

enum class Label { Real, Fake };

// "real" / "fake", the spelling used in every file format.
std::string_view to_string(Label label) noexcept;
// Accepts exactly "real" or "fake"; anything else is a Parse error.
Label parse_label(std::string_view s);

struct ImageRecord {
  std::string image_id;
  std::filesystem::path path;
  Label label = Label::Real;
  std::string method;  // forgery method tag, "none" for pristine sources
  std::optional<std::string> video_id;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

// Labeled image corpus. Records keep file order; image ids are unique.
struct CorpusManifest {
  std::string name;
  std::vector<ImageRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  const ImageRecord* find(std::string_view image_id) const noexcept;
};

// Reads the JSONL manifest format, one record per line:
//   {"image_id": str, "path": str, "label": "real"|"fake", "method": str, "video_id": str|null}
// Blank lines are skipped. Errors: Parse (with 1-based line), DuplicateId,
// MissingField. The manifest name defaults to the file stem.
CorpusManifest load_manifest(const std::filesystem::path& path);
CorpusManifest parse_manifest(std::istream& in, std::string name);

void write_manifest(const CorpusManifest& manifest, std::ostream& out);
void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);

struct LabelSplit {
  std::vector<ImageRecord> reals;
  std::vector<ImageRecord> fakes;
};

// Order-preserving partition by label.
LabelSplit split_by_label(const CorpusManifest& manifest);

// Throws DegenerateCorpus unless the manifest has at least one record of each label.
void require_both_labels(const CorpusManifest& manifest);

}  // namespace forgecap
