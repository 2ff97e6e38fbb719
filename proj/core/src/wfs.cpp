#include "forgecap/wfs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>

#include <json.hpp>

#include "forgecap/error.hpp"
#include "forgecap/parallel.hpp"
#include "http_endpoint.hpp"
#include "json_util.hpp"
#include "text.hpp"

namespace forgecap::wfs {

using nlohmann::ordered_json;

double sigmoid(double logit) {
  if (!std::isfinite(logit)) throw Error(Errc::InvalidArgument, "logit must be finite");
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

EddScoreMap parse_edd_scores(std::istream& in) {
  EddScoreMap out;
  json_util::for_each_jsonl(in, [&](const ordered_json& j, std::size_t line_no) {
    EddScore s;
    s.image_id = json_util::required_string(j, "image_id");
    s.logit = json_util::required_number(j, "logit");
    try {
      s.score = sigmoid(s.logit);
    } catch (const Error&) {
      throw Error(Errc::Parse, "line " + std::to_string(line_no) + ": non-finite logit");
    }
    const std::string id = s.image_id;
    if (!out.emplace(id, std::move(s)).second) throw Error(Errc::DuplicateId, id);
  });
  return out;
}

EddScoreMap load_edd_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open EDD scores " + path.string());
  return parse_edd_scores(in);
}

void write_edd_scores(const EddScoreMap& scores, std::ostream& out) {
  for (const auto& [id, s] : scores) {
    ordered_json j;
    j["image_id"] = id;
    j["logit"] = s.logit;
    out << j.dump() << '\n';
  }
}

RemoteEdd::RemoteEdd(std::string endpoint, std::chrono::duration<double> timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  (void)http::parse_endpoint(endpoint_);
}

EddScore RemoteEdd::score(const ImageRecord& image) const {
  const ordered_json req = {{"image_path", image.path.generic_string()}};
  const auto ep = http::parse_endpoint(endpoint_);
  std::string body;
  try {
    body = http::post_json(ep, "/score", req.dump(), timeout_);
  } catch (const Error& e) {
    if (e.code() != Errc::Timeout && e.code() != Errc::Unreachable) throw;
    body = http::post_json(ep, "/score", req.dump(), timeout_);
  }
  EddScore s;
  s.image_id = image.image_id;
  try {
    const auto j = ordered_json::parse(body);
    s.logit = json_util::required_number(j, "logit");
    s.score = sigmoid(s.logit);
  } catch (const std::exception& e) {
    throw Error(Errc::BackendProtocol, "bad /score response for " + image.image_id + ": " + e.what());
  }
  return s;
}

EddScoreMap fetch_edd_scores(const RemoteEdd& edd, const CorpusManifest& corpus, unsigned max_parallel) {
  std::vector<EddScore> scores(corpus.size());
  parallel_for(corpus.size(), max_parallel, [&](std::size_t i) { scores[i] = edd.score(corpus.records[i]); });
  EddScoreMap out;
  for (auto& s : scores) {
    const std::string id = s.image_id;
    if (!out.emplace(id, std::move(s)).second) throw Error(Errc::DuplicateId, id);
  }
  return out;
}

std::map<std::string, double> score_values(const EddScoreMap& scores) {
  std::map<std::string, double> out;
  for (const auto& [id, s] : scores) out.emplace(id, s.score);
  return out;
}

std::string inject_score_into_prompt(std::string_view base_prompt, double score) {
  if (!(score >= 0.0 && score <= 1.0)) throw Error(Errc::InvalidArgument, "blending score must lie in [0,1]");
  return std::string(base_prompt) + " By the observation of the blending expert, blending score: " +
         text::format_score(score);
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::Real: return "real";
    case Verdict::Fake: return "fake";
    case Verdict::Unparseable: return "unparseable";
  }
  return "unparseable";
}

ParsedVerdict parse_verdict(std::string_view reply) {
  const auto body = text::trim(reply);
  constexpr std::string_view kLead = "this image is ";
  for (auto [word, verdict] : {std::pair{std::string_view("real"), Verdict::Real},
                               std::pair{std::string_view("fake"), Verdict::Fake}}) {
    const std::size_t n = kLead.size() + word.size();
    if (!text::starts_with_icase(body, kLead) || !text::starts_with_icase(body.substr(kLead.size()), word)) continue;
    if (body.size() > n && text::is_alpha(body[n])) continue;  // "realistic", "faked"
    auto rest = body.substr(n);
    if (!rest.empty() && std::string_view(".,;:!").find(rest.front()) != std::string_view::npos)
      rest.remove_prefix(1);
    return {verdict, std::string(text::trim(rest))};
  }
  return {Verdict::Unparseable, std::string(reply)};
}

std::optional<BlendingBand> parse_blending_band(std::string_view reply) {
  const std::string lower = text::to_lower(reply);
  if (lower.find("contains obvious blending artifacts") != std::string::npos) return BlendingBand::Obvious;
  if (lower.find("contains minimal blending artifacts") != std::string::npos) return BlendingBand::Minimal;
  return std::nullopt;
}

double fuse(double model_score, std::optional<double> edd_score, double weight) {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(model_score)) throw Error(Errc::InvalidArgument, "model score must lie in [0,1]");
  if (!in_unit(weight)) throw Error(Errc::InvalidArgument, "fusion weight must lie in [0,1]");
  if (!edd_score) return model_score;
  if (!in_unit(*edd_score)) throw Error(Errc::InvalidArgument, "EDD score must lie in [0,1]");
  return std::clamp(weight * *edd_score + (1.0 - weight) * model_score, 0.0, 1.0);
}

double model_score(Verdict verdict, std::optional<double> fake_probability) {
  switch (verdict) {
    case Verdict::Unparseable: return 0.5;
    case Verdict::Fake: return fake_probability.value_or(1.0);
    case Verdict::Real: return fake_probability.value_or(0.0);
  }
  return 0.5;
}

}  // namespace forgecap::wfs
