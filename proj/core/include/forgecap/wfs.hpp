#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "forgecap/manifest.hpp"

// Weak-feature supplementing: external detector scores, their injection into
// prompts, verdict parsing and numeric score fusion.
namespace forgecap::wfs {

// Logistic function. NaN and infinite inputs are InvalidArgument.
double sigmoid(double logit);

struct EddScore {
  std::string image_id;
  double logit = 0.0;
  double score = 0.5;  // sigmoid(logit)
};

using EddScoreMap = std::map<std::string, EddScore>;

// JSONL of {"image_id", "logit"}. Errors: Parse, DuplicateId, MissingField.
// An empty file yields an empty map.
EddScoreMap load_edd_scores(const std::filesystem::path& path);
EddScoreMap parse_edd_scores(std::istream& in);
void write_edd_scores(const EddScoreMap& scores, std::ostream& out);

// Remote detector: POST {endpoint}/score {"image_path"} -> {"logit"}.
class RemoteEdd {
 public:
  RemoteEdd(std::string endpoint, std::chrono::duration<double> timeout);
  EddScore score(const ImageRecord& image) const;

 private:
  std::string endpoint_;
  std::chrono::duration<double> timeout_;
};

EddScoreMap fetch_edd_scores(const RemoteEdd& edd, const CorpusManifest& corpus, unsigned max_parallel);

// image_id -> score view used by dataset construction.
std::map<std::string, double> score_values(const EddScoreMap& scores);

// Appends " By the observation of the blending expert, blending score: {s:.2f}".
std::string inject_score_into_prompt(std::string_view base_prompt, double score);

enum class Verdict { Real, Fake, Unparseable };
std::string_view to_string(Verdict v) noexcept;

struct ParsedVerdict {
  Verdict verdict = Verdict::Unparseable;
  std::string explanation;
};

// Case-insensitive leading "this image is real|fake" (as a whole word). The
// explanation is the remainder with one separating punctuation mark and
// surrounding whitespace removed; unparseable replies keep the full text.
ParsedVerdict parse_verdict(std::string_view reply);

enum class BlendingBand { Obvious, Minimal };

// Finds "contains obvious|minimal blending artifacts" in a reply.
std::optional<BlendingBand> parse_blending_band(std::string_view reply);

inline constexpr double kDefaultFusionWeight = 0.5;

// edd absent -> model_score; else w * edd + (1 - w) * model. All inputs in [0,1].
double fuse(double model_score, std::optional<double> edd_score, double weight = kDefaultFusionWeight);

// Continuous fake score for a model reply: 0.5 for unparseable replies,
// otherwise the backend's fake_probability when present, else 1 for fake and
// 0 for real.
double model_score(Verdict verdict, std::optional<double> fake_probability);

struct FusedVerdict {
  std::string image_id;
  Verdict model_verdict = Verdict::Unparseable;
  double model_score = 0.5;
  std::optional<double> edd_score;
  double fused_score = 0.5;
  std::string explanation;
};

}  // namespace forgecap::wfs
