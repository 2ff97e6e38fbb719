#include "forgecap/sfs.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "forgecap/digest.hpp"
#include "forgecap/error.hpp"
#include "forgecap/parallel.hpp"
#include "json_util.hpp"
#include "text.hpp"

namespace forgecap::sfs {

using nlohmann::ordered_json;

namespace {

constexpr std::string_view kBlendingPrefix = "By the observation of the blending expert, blending score: ";

std::vector<std::string> top_strong_features(const mfa::FeatureRanking& ranking, std::size_t top_k) {
  const auto strong = ranking.strong();
  if (strong.empty()) throw Error(Errc::EmptyStrongSet, "ranking has no strong features");
  if (top_k == 0) throw Error(Errc::InvalidArgument, "top_k must be positive");
  if (top_k > strong.size())
    throw Error(Errc::InvalidArgument,
                "top_k=" + std::to_string(top_k) + " exceeds the " + std::to_string(strong.size()) + " strong features");
  std::vector<std::string> features;
  for (std::size_t i = 0; i < top_k; ++i) features.push_back(strong[i].question.feature);
  return features;
}

std::string bullet_list(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += "\n- " + s;
  return out;
}

// "a", "a and b", "a, b and c"
std::string join_words(const std::vector<std::string>& items, std::string_view last_sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += (i + 1 == items.size()) ? std::string(" ") + std::string(last_sep) + " " : std::string(", ");
    out += items[i];
  }
  return out;
}

void check_score(double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw Error(Errc::InvalidArgument, "blending score must lie in [0,1]");
}

}  // namespace

std::string fake_summary_request(const std::vector<std::string>& features) {
  return "Summarize the following forgery-related features into a single instruction that asks a model to "
         "explain why a face image is fake by pointing out which of these anomalies it shows. Keep every "
         "feature name verbatim and reply with the instruction only.\nFeatures:" +
         bullet_list(features);
}

std::string real_summary_request(const std::vector<std::string>& features) {
  return "Summarize the following forgery-related features into a single instruction that asks a model to "
         "explain why a face image is real by describing the natural, artifact-free counterpart of each "
         "feature. Keep every feature name verbatim and reply with the instruction only.\nFeatures:" +
         bullet_list(features);
}

PromptPair summarize_prompts(const Backend& teacher, const mfa::FeatureRanking& ranking, std::size_t top_k) {
  auto features = top_strong_features(ranking, top_k);
  PromptPair pair;
  pair.p_fake = std::string(text::trim(teacher.complete(fake_summary_request(features)).text));
  pair.p_real = std::string(text::trim(teacher.complete(real_summary_request(features)).text));
  if (pair.p_fake.empty() || pair.p_real.empty())
    throw Error(Errc::BackendProtocol, "teacher returned an empty summary prompt");
  pair.source_features_fake = features;
  pair.source_features_real = std::move(features);
  return pair;
}

PromptPair template_prompts(const mfa::FeatureRanking& ranking, std::size_t top_k) {
  auto features = top_strong_features(ranking, top_k);
  PromptPair pair;
  pair.p_fake = "Explain why this face image is fake by pointing out which of these anomalies it shows: " +
                join_words(features, "and") + ".";
  pair.p_real = "Explain why this face image is real by confirming that none of these anomalies is present: " +
                join_words(features, "or") + ".";
  pair.source_features_fake = features;
  pair.source_features_real = std::move(features);
  return pair;
}

std::string blending_statement(double s) {
  check_score(s);
  return std::string(kBlendingPrefix) + text::format_score(s) + ". And this image contains " +
         (s >= kObviousBlendingThreshold ? "obvious" : "minimal") + " blending artifacts.";
}

std::string build_answer(Label label, std::string_view explanation, std::optional<double> blending_score) {
  const auto body = text::trim(explanation);
  if (body.empty()) throw Error(Errc::InvalidArgument, "explanation must be non-empty");
  std::string answer = "This image is " + std::string(to_string(label)) + ". " + std::string(body);
  if (blending_score) answer += " " + blending_statement(*blending_score);
  return answer;
}

// --- explanation sources ----------------------------------------------------

std::string TemplateExplanations::explain(const ImageRecord& image) const {
  if (image.label == Label::Fake) return "The image shows " + join_words(pair_.source_features_fake, "and") + ".";
  return "The image shows no sign of " + join_words(pair_.source_features_real, "or") + ".";
}

std::string BackendExplanations::explain(const ImageRecord& image) const {
  const auto& prompt = image.label == Label::Fake ? pair_.p_fake : pair_.p_real;
  return std::string(text::trim(backend_.ask(image, prompt).text));
}

std::string MappedExplanations::explain(const ImageRecord& image) const {
  auto it = table_.find(image.image_id);
  return it == table_.end() ? std::string{} : it->second;
}

// --- dataset ----------------------------------------------------------------

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

FinetuneDataset build_dataset(const CorpusManifest& corpus, const ExplanationSource& explanations,
                              const BuildOptions& options) {
  if (options.blending_scores) {
    std::string missing;
    for (const auto& r : corpus.records) {
      auto it = options.blending_scores->find(r.image_id);
      if (it == options.blending_scores->end()) {
        missing += (missing.empty() ? "" : ", ") + r.image_id;
      } else {
        check_score(it->second);
      }
    }
    if (!missing.empty()) throw Error(Errc::MissingScore, missing);
  }

  std::vector<std::string> texts(corpus.size());
  parallel_for(corpus.size(), explanations.max_parallel(),
               [&](std::size_t i) { texts[i] = std::string(text::trim(explanations.explain(corpus.records[i]))); });
  std::string missing;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (texts[i].empty()) missing += (missing.empty() ? "" : ", ") + corpus.records[i].image_id;
  if (!missing.empty()) throw Error(Errc::MissingExplanation, missing);

  std::vector<VqaSample> ordered;
  ordered.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = corpus.records[i];
    VqaSample s;
    s.image_id = r.image_id;
    s.image_path = r.path;
    s.label = r.label;
    if (options.blending_scores) {
      const double score = options.blending_scores->at(r.image_id);
      s.blending_score = score;
      s.blending_statement = blending_statement(score);
    }
    s.answer = build_answer(r.label, texts[i], s.blending_score);
    ordered.push_back(std::move(s));
  }

  FinetuneDataset ds;
  ds.manifest_name = corpus.name;
  ds.ranking_digest = options.ranking_digest;
  ds.shuffle_seed = options.shuffle_seed;
  ds.samples.reserve(ordered.size());
  for (std::size_t i : shuffled_indices(ordered.size(), options.shuffle_seed))
    ds.samples.push_back(std::move(ordered[i]));
  return ds;
}

// --- export / import --------------------------------------------------------

namespace {

ordered_json samples_json(const FinetuneDataset& ds) {
  ordered_json arr = ordered_json::array();
  for (const auto& s : ds.samples) {
    ordered_json item;
    item["id"] = s.image_id;
    item["image"] = s.image_path.generic_string();
    item["conversations"] = ordered_json::array({
        {{"from", "human"}, {"value", std::string(kImageToken) + s.fixed_prompt}},
        {{"from", "gpt"}, {"value", s.answer}},
    });
    item["label"] = to_string(s.label);
    item["blending_score"] = s.blending_score ? ordered_json(*s.blending_score) : ordered_json(nullptr);
    arr.push_back(std::move(item));
  }
  return arr;
}

VqaSample sample_from_json(const ordered_json& item) {
  VqaSample s;
  s.image_id = json_util::required_string(item, "id");
  s.image_path = json_util::required_string(item, "image");
  const auto& conv = json_util::required(item, "conversations");
  if (!conv.is_array() || conv.size() != 2)
    throw Error(Errc::Parse, s.image_id + ": expected exactly one human and one gpt turn");
  const std::string human = json_util::required_string(conv[0], "value");
  if (json_util::required_string(conv[0], "from") != "human" || json_util::required_string(conv[1], "from") != "gpt")
    throw Error(Errc::Parse, s.image_id + ": turns must be human then gpt");
  if (human.rfind(kImageToken, 0) != 0)
    throw Error(Errc::Parse, s.image_id + ": human turn lacks the image placeholder");
  s.fixed_prompt = human.substr(kImageToken.size());
  if (s.fixed_prompt != kFixedPrompt) throw Error(Errc::Parse, s.image_id + ": unexpected human prompt");
  s.answer = json_util::required_string(conv[1], "value");

  if (auto it = item.find("label"); it != item.end()) {
    s.label = parse_label(it->get<std::string>());
  } else if (s.answer.rfind("This image is real", 0) == 0) {
    s.label = Label::Real;
  } else if (s.answer.rfind("This image is fake", 0) == 0) {
    s.label = Label::Fake;
  } else {
    throw Error(Errc::Parse, s.image_id + ": cannot infer label");
  }
  if (auto it = item.find("blending_score"); it != item.end() && !it->is_null()) {
    s.blending_score = it->get<double>();
    const auto at = s.answer.find(kBlendingPrefix);
    if (at == std::string::npos) throw Error(Errc::Parse, s.image_id + ": blending score without statement");
    s.blending_statement = s.answer.substr(at);
  }
  return s;
}

}  // namespace

std::string dataset_to_json(const FinetuneDataset& dataset) { return samples_json(dataset).dump(2) + "\n"; }

std::string dataset_digest(const FinetuneDataset& dataset) {
  return sha256_hex(dataset_to_json(dataset) + "\n" + dataset.manifest_name + "\n" + dataset.ranking_digest + "\n" +
                    std::to_string(dataset.shuffle_seed));
}

std::filesystem::path meta_path_for(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_filename(dataset_path.stem().string() + ".meta.json");
  return p;
}

void export_dataset(const FinetuneDataset& dataset, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, "cannot write dataset " + path.string());
    out << dataset_to_json(dataset);
    if (!out) throw Error(Errc::Io, "write failed for " + path.string());
  }
  ordered_json meta;
  meta["manifest_name"] = dataset.manifest_name;
  meta["ranking_digest"] = dataset.ranking_digest;
  meta["shuffle_seed"] = dataset.shuffle_seed;
  meta["samples"] = dataset.samples.size();
  meta["dataset_digest"] = dataset_digest(dataset);
  json_util::write_json_file(meta_path_for(path), meta);
}

FinetuneDataset import_dataset(const std::filesystem::path& path) {
  const auto arr = json_util::read_json_file(path);
  if (!arr.is_array()) throw Error(Errc::Parse, path.string() + ": dataset must be a JSON array");
  FinetuneDataset ds;
  const auto meta_path = meta_path_for(path);
  try {
    for (const auto& item : arr) ds.samples.push_back(sample_from_json(item));
    if (std::filesystem::exists(meta_path)) {
      const auto meta = json_util::read_json_file(meta_path);
      ds.manifest_name = json_util::required_string(meta, "manifest_name");
      ds.ranking_digest = json_util::required_string(meta, "ranking_digest");
      ds.shuffle_seed = json_util::required(meta, "shuffle_seed").get<std::uint64_t>();
      if (json_util::required_string(meta, "dataset_digest") != dataset_digest(ds))
        throw Error(Errc::Parse, path.string() + ": dataset does not match the digest in " + meta_path.string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Parse, path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace forgecap::sfs
