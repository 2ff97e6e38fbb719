#include "forgecap/mfa.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <regex>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "forgecap/digest.hpp"
#include "forgecap/error.hpp"
#include "forgecap/parallel.hpp"
#include "json_util.hpp"
#include "text.hpp"

namespace forgecap::mfa {

using nlohmann::ordered_json;

const std::string_view kDefaultSeedPrompt =
    "You are auditing a vision-language model for face forgery detection. "
    "List {n} distinct yes/no questions, each probing one visual forgery-related feature of a face "
    "image (for example lighting, facial structure, skin texture, blending boundaries, expressions). "
    "Phrase every question so that the answer \"yes\" means the anomaly is present, as in "
    "\"Is the face layout unnatural?\". Output one question per line in the form "
    "\"feature: question?\" and nothing else.";

const ForgeryQuestion* QuestionBank::find(std::string_view question_id) const noexcept {
  for (const auto& q : questions)
    if (q.question_id == question_id) return &q;
  return nullptr;
}

// --- generation -------------------------------------------------------------

std::vector<ForgeryQuestion> parse_question_lines(std::string_view reply) {
  static const std::regex kListMarker(R"(^(?:[-*+]+|\d+[.):]|\(\d+\))\s*)");
  std::vector<ForgeryQuestion> out;
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto end = reply.find('\n', pos);
    if (end == std::string_view::npos) end = reply.size();
    std::string line(text::trim(reply.substr(pos, end - pos)));
    pos = end + 1;

    line = std::regex_replace(line, kListMarker, "", std::regex_constants::format_first_only);
    line = std::string(text::trim(line));
    if (line.size() < 2 || line.back() != '?') continue;

    ForgeryQuestion q;
    if (auto colon = line.find(':'); colon != std::string::npos && colon > 0) {
      q.feature = std::string(text::trim(std::string_view(line).substr(0, colon)));
      q.text = std::string(text::trim(std::string_view(line).substr(colon + 1)));
    } else {
      q.text = line;
    }
    if (q.text.size() < 2) continue;
    if (q.feature.empty()) q.feature = text::to_lower(std::string_view(q.text).substr(0, q.text.size() - 1));
    out.push_back(std::move(q));
  }
  return out;
}

QuestionBank generate_questions(const Backend& teacher, std::size_t n_q, std::string_view seed_prompt) {
  if (n_q == 0) throw Error(Errc::InvalidArgument, "n_q must be positive");
  std::string prompt(seed_prompt);
  if (auto at = prompt.find("{n}"); at != std::string::npos) prompt.replace(at, 3, std::to_string(n_q));

  QuestionBank bank;
  std::unordered_set<std::string> seen;
  for (int attempt = 0; attempt < kGenerationAttempts && bank.n_q() < n_q; ++attempt) {
    const ModelReply reply = teacher.complete(prompt);
    for (auto& q : parse_question_lines(reply.text)) {
      if (bank.n_q() == n_q) break;
      if (!seen.insert(text::normalized_key(q.text)).second) continue;
      q.question_id = fmt::format("q{:03}", bank.n_q());
      bank.questions.push_back(std::move(q));
    }
  }
  if (bank.n_q() < n_q)
    throw Error(Errc::InsufficientQuestions, fmt::format("got {}, want {}", bank.n_q(), n_q));
  return bank;
}

// --- bank IO ----------------------------------------------------------------

namespace {

QuestionBank bank_from_json(const ordered_json& j) {
  if (!j.is_array()) throw Error(Errc::Parse, "question bank must be a JSON array");
  if (j.empty()) throw Error(Errc::EmptyBank, "question bank has no questions");
  QuestionBank bank;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& item = j[i];
    ForgeryQuestion q;
    q.question_id = json_util::required_string(item, "question_id");
    q.feature = json_util::required_string(item, "feature");
    q.text = json_util::required_string(item, "text");
    if (auto it = item.find("yes_means_anomaly"); it != item.end()) {
      if (!it->is_boolean()) throw Error(Errc::Parse, "entry " + std::to_string(i) + ": yes_means_anomaly must be bool");
      q.yes_means_anomaly = it->get<bool>();
    }
    if (q.question_id.empty()) throw Error(Errc::Parse, "entry " + std::to_string(i) + ": empty question_id");
    if (q.text.empty() || q.text.back() != '?')
      throw Error(Errc::Parse, "question " + q.question_id + " must end with '?'");
    if (!ids.insert(q.question_id).second) throw Error(Errc::DuplicateId, q.question_id);
    bank.questions.push_back(std::move(q));
  }
  return bank;
}

}  // namespace

QuestionBank parse_question_bank(std::istream& in) {
  try {
    return bank_from_json(ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Parse, e.what());
  }
}

QuestionBank load_question_bank(const std::filesystem::path& path) {
  return bank_from_json(json_util::read_json_file(path));
}

void save_question_bank(const QuestionBank& bank, const std::filesystem::path& path) {
  ordered_json j = ordered_json::array();
  for (const auto& q : bank.questions)
    j.push_back({{"question_id", q.question_id},
                 {"feature", q.feature},
                 {"text", q.text},
                 {"yes_means_anomaly", q.yes_means_anomaly}});
  json_util::write_json_file(path, j);
}

// --- evaluation -------------------------------------------------------------

std::vector<ResponseRecord> evaluate_questions(const Backend& backend, const QuestionBank& bank,
                                               const CorpusManifest& corpus,
                                               const EvaluateOptions& options) {
  require_both_labels(corpus);
  const std::size_t n_images = corpus.size();
  std::vector<ResponseRecord> records(bank.n_q() * n_images);
  std::mutex sink_mu;

  parallel_for(records.size(), options.max_parallel, [&](std::size_t i) {
    const auto& q = bank.questions[i / n_images];
    const auto& image = corpus.records[i % n_images];
    const ModelReply reply = backend.ask(image, q.text);
    ResponseRecord r{q.question_id, image.image_id, image.label, normalize_yes_no(reply.text)};
    if (options.on_record) {
      std::lock_guard lock(sink_mu);
      options.on_record(r);
    }
    records[i] = std::move(r);
  });
  return records;
}

void write_responses(std::span<const ResponseRecord> records, std::ostream& out) {
  for (const auto& r : records) {
    ordered_json j;
    j["question_id"] = r.question_id;
    j["image_id"] = r.image_id;
    j["label"] = to_string(r.label);
    j["answer"] = to_string(r.answer);
    out << j.dump() << '\n';
  }
}

std::vector<ResponseRecord> read_responses(std::istream& in) {
  std::vector<ResponseRecord> out;
  json_util::for_each_jsonl(in, [&](const ordered_json& j, std::size_t) {
    out.push_back({json_util::required_string(j, "question_id"), json_util::required_string(j, "image_id"),
                   parse_label(json_util::required_string(j, "label")),
                   parse_yes_no(json_util::required_string(j, "answer"))});
  });
  return out;
}

// --- aggregation ------------------------------------------------------------

double balanced_accuracy_from_counts(std::size_t y_real, std::size_t n_real, std::size_t y_fake,
                                     std::size_t n_fake, bool yes_means_anomaly) {
  if (y_real + n_real == 0 || y_fake + n_fake == 0)
    throw Error(Errc::InvalidArgument, "balanced accuracy needs answers on both labels");
  const double real_correct = static_cast<double>(yes_means_anomaly ? n_real : y_real);
  const double fake_correct = static_cast<double>(yes_means_anomaly ? y_fake : n_fake);
  return 0.5 * (real_correct / static_cast<double>(y_real + n_real) +
                fake_correct / static_cast<double>(y_fake + n_fake));
}

double balanced_accuracy_from_confusion(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn) {
  if (tp + fn == 0 || tn + fp == 0)
    throw Error(Errc::InvalidArgument, "balanced accuracy needs both classes in the confusion matrix");
  const double tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double tnr = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return (tpr + tnr) / 2.0;
}

QuestionStats aggregate(const ForgeryQuestion& question, std::span<const ResponseRecord> records) {
  QuestionStats s;
  s.question_id = question.question_id;
  for (const auto& r : records) {
    if (r.question_id != question.question_id)
      throw Error(Errc::InvalidArgument,
                  "record for " + r.question_id + " passed to aggregate(" + question.question_id + ")");
    const bool real = r.label == Label::Real;
    switch (r.answer) {
      case YesNo::Yes: ++(real ? s.y_real : s.y_fake); break;
      case YesNo::No: ++(real ? s.n_real : s.n_fake); break;
      case YesNo::Invalid: ++s.invalid_count; break;
    }
  }
  const bool no_real = s.y_real + s.n_real == 0;
  const bool no_fake = s.y_fake + s.n_fake == 0;
  if (no_real || no_fake)
    throw Error(Errc::DegenerateQuestion,
                question.question_id + " (" + (no_real && no_fake ? "both" : no_real ? "real" : "fake") + ")");

  if (question.yes_means_anomaly) {
    s.tp = s.y_fake; s.fn = s.n_fake; s.tn = s.n_real; s.fp = s.y_real;
  } else {
    s.tp = s.n_fake; s.fn = s.y_fake; s.tn = s.y_real; s.fp = s.n_real;
  }
  s.tpr = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
  s.tnr = static_cast<double>(s.tn) / static_cast<double>(s.tn + s.fp);
  s.balanced_accuracy =
      balanced_accuracy_from_counts(s.y_real, s.n_real, s.y_fake, s.n_fake, question.yes_means_anomaly);
  return s;
}

Assessment aggregate_all(const QuestionBank& bank, std::span<const ResponseRecord> records) {
  std::unordered_map<std::string, std::vector<ResponseRecord>> by_question;
  for (const auto& r : records) {
    if (!bank.find(r.question_id)) throw Error(Errc::InvalidArgument, "unknown question " + r.question_id);
    by_question[r.question_id].push_back(r);
  }
  Assessment out;
  for (const auto& q : bank.questions) {
    const auto& rs = by_question[q.question_id];
    try {
      out.stats.push_back(aggregate(q, rs));
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateQuestion) throw;
      std::size_t real = 0, fake = 0;
      for (const auto& r : rs)
        if (r.answer != YesNo::Invalid) ++(r.label == Label::Real ? real : fake);
      out.degenerate.push_back({q.question_id, real == 0 && fake == 0 ? "both" : real == 0 ? "real" : "fake"});
    }
  }
  return out;
}

// --- ranking ----------------------------------------------------------------

std::span<const RankedFeature> FeatureRanking::strong() const noexcept {
  auto it = std::find_if(entries.begin(), entries.end(), [](const RankedFeature& e) { return !e.strong; });
  return {entries.data(), static_cast<std::size_t>(it - entries.begin())};
}

std::span<const RankedFeature> FeatureRanking::weak() const noexcept {
  const auto n_strong = strong().size();
  return {entries.data() + n_strong, entries.size() - n_strong};
}

FeatureRanking rank(std::span<const QuestionStats> stats, const QuestionBank& bank, double strong_threshold,
                    std::vector<DegenerateQuestion> degenerate) {
  if (!(strong_threshold >= 0.0 && strong_threshold <= 1.0))
    throw Error(Errc::InvalidArgument, "strong_threshold must lie in [0,1]");
  if (stats.empty()) throw Error(Errc::AllDegenerate, "no question produced a usable balanced accuracy");

  FeatureRanking ranking;
  ranking.strong_threshold = strong_threshold;
  ranking.degenerate = std::move(degenerate);
  ranking.entries.reserve(stats.size());
  for (const auto& s : stats) {
    const ForgeryQuestion* q = bank.find(s.question_id);
    if (!q) throw Error(Errc::InvalidArgument, "stats for unknown question " + s.question_id);
    ranking.entries.push_back({*q, s, s.balanced_accuracy >= strong_threshold});
  }
  std::sort(ranking.entries.begin(), ranking.entries.end(), [](const RankedFeature& a, const RankedFeature& b) {
    if (a.stats.balanced_accuracy != b.stats.balanced_accuracy)
      return a.stats.balanced_accuracy > b.stats.balanced_accuracy;
    return a.question.question_id < b.question.question_id;
  });
  return ranking;
}

namespace {

ordered_json ranking_json(const FeatureRanking& ranking) {
  ordered_json j;
  j["strong_threshold"] = ranking.strong_threshold;
  ordered_json entries = ordered_json::array();
  std::size_t position = 0;
  for (const auto& e : ranking.entries) {
    const auto& s = e.stats;
    ordered_json item;
    item["rank"] = ++position;
    item["question_id"] = e.question.question_id;
    item["feature"] = e.question.feature;
    item["text"] = e.question.text;
    item["yes_means_anomaly"] = e.question.yes_means_anomaly;
    item["strong"] = e.strong;
    item["weak"] = !e.strong;
    item["balanced_accuracy"] = s.balanced_accuracy;
    item["tpr"] = s.tpr;
    item["tnr"] = s.tnr;
    item["tp"] = s.tp;
    item["tn"] = s.tn;
    item["fp"] = s.fp;
    item["fn"] = s.fn;
    item["y_real"] = s.y_real;
    item["n_real"] = s.n_real;
    item["y_fake"] = s.y_fake;
    item["n_fake"] = s.n_fake;
    item["invalid_count"] = s.invalid_count;
    entries.push_back(std::move(item));
  }
  j["entries"] = std::move(entries);
  ordered_json degenerate = ordered_json::array();
  for (const auto& d : ranking.degenerate) degenerate.push_back({{"question_id", d.question_id}, {"side", d.side}});
  j["degenerate"] = std::move(degenerate);
  return j;
}

std::size_t count_field(const ordered_json& j, const char* key) {
  const auto& v = json_util::required(j, key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    throw Error(Errc::Parse, std::string(key) + " must be a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

std::string ranking_to_json(const FeatureRanking& ranking) { return ranking_json(ranking).dump(2) + "\n"; }

namespace {

FeatureRanking ranking_from_object(const ordered_json& j) {
  FeatureRanking r;
  r.strong_threshold = json_util::required_number(j, "strong_threshold");
  for (const auto& item : json_util::required(j, "entries")) {
    RankedFeature e;
    e.question.question_id = json_util::required_string(item, "question_id");
    e.question.feature = json_util::required_string(item, "feature");
    e.question.text = json_util::required_string(item, "text");
    e.question.yes_means_anomaly = json_util::required(item, "yes_means_anomaly").get<bool>();
    e.strong = json_util::required(item, "strong").get<bool>();
    auto& s = e.stats;
    s.question_id = e.question.question_id;
    s.balanced_accuracy = json_util::required_number(item, "balanced_accuracy");
    s.tpr = json_util::required_number(item, "tpr");
    s.tnr = json_util::required_number(item, "tnr");
    s.tp = count_field(item, "tp");
    s.tn = count_field(item, "tn");
    s.fp = count_field(item, "fp");
    s.fn = count_field(item, "fn");
    s.y_real = count_field(item, "y_real");
    s.n_real = count_field(item, "n_real");
    s.y_fake = count_field(item, "y_fake");
    s.n_fake = count_field(item, "n_fake");
    s.invalid_count = count_field(item, "invalid_count");
    r.entries.push_back(std::move(e));
  }
  if (auto it = j.find("degenerate"); it != j.end())
    for (const auto& d : *it)
      r.degenerate.push_back({json_util::required_string(d, "question_id"), json_util::required_string(d, "side")});
  return r;
}

}  // namespace

FeatureRanking ranking_from_json(std::string_view json) {
  try {
    return ranking_from_object(ordered_json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Parse, e.what());
  }
}

void save_ranking(const FeatureRanking& ranking, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write ranking " + path.string());
  out << ranking_to_json(ranking);
}

FeatureRanking load_ranking(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open ranking " + path.string());
  const std::string data{std::istreambuf_iterator<char>(in), {}};
  return ranking_from_json(data);
}

std::string ranking_digest(const FeatureRanking& ranking) { return sha256_hex(ranking_to_json(ranking)); }

}  // namespace forgecap::mfa
