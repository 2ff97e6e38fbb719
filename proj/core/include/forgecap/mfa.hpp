#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forgecap/backend.hpp"
#include "forgecap/manifest.hpp"

// Model feature assessment: probe a model with yes/no forgery-feature
// questions over a labeled corpus, score each question by balanced accuracy
// (fake = positive class) and rank the features.
namespace forgecap::mfa {

struct ForgeryQuestion {
  std::string question_id;
  std::string feature;
  std::string text;  // interrogative, ends with '?'
  // When true a "yes" asserts the forgery feature (i.e. votes fake).
  bool yes_means_anomaly = true;

  friend bool operator==(const ForgeryQuestion&, const ForgeryQuestion&) = default;
};

struct QuestionBank {
  std::vector<ForgeryQuestion> questions;

  std::size_t n_q() const noexcept { return questions.size(); }
  const ForgeryQuestion* find(std::string_view question_id) const noexcept;
};

inline constexpr std::size_t kDefaultQuestionCount = 50;
inline constexpr double kDefaultStrongThreshold = 0.6;
inline constexpr int kGenerationAttempts = 3;

// Default teacher instruction; "{n}" is replaced with the requested count.
extern const std::string_view kDefaultSeedPrompt;

// Asks the teacher backend for n_q questions, one per line. Lines may be
// "feature: question?" or a bare "question?"; numbering and bullets are
// stripped and duplicates (case/whitespace-insensitive) dropped. Up to
// kGenerationAttempts requests are accumulated before failing with
// InsufficientQuestions. Ids are "q000", "q001", ...
QuestionBank generate_questions(const Backend& teacher, std::size_t n_q, std::string_view seed_prompt);

// Splits one teacher reply into (feature, question) candidates.
std::vector<ForgeryQuestion> parse_question_lines(std::string_view reply);

// JSON array of {"question_id", "feature", "text", "yes_means_anomaly"?}.
QuestionBank load_question_bank(const std::filesystem::path& path);
QuestionBank parse_question_bank(std::istream& in);
void save_question_bank(const QuestionBank& bank, const std::filesystem::path& path);

struct ResponseRecord {
  std::string question_id;
  std::string image_id;
  Label label = Label::Real;
  YesNo answer = YesNo::Invalid;

  friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;
};

struct EvaluateOptions {
  unsigned max_parallel = 1;
  // Called under a lock as each record completes, in completion order.
  std::function<void(const ResponseRecord&)> on_record;
};

// n_q x |corpus| records in canonical order (question-major, then corpus
// order), independent of completion order. Requires both labels in corpus.
std::vector<ResponseRecord> evaluate_questions(const Backend& backend, const QuestionBank& bank,
                                               const CorpusManifest& corpus,
                                               const EvaluateOptions& options = {});

// Responses JSONL: {"question_id", "image_id", "label", "answer"}
void write_responses(std::span<const ResponseRecord> records, std::ostream& out);
std::vector<ResponseRecord> read_responses(std::istream& in);

struct QuestionStats {
  std::string question_id;
  // Raw answer counts per label.
  std::size_t y_real = 0, n_real = 0, y_fake = 0, n_fake = 0;
  std::size_t invalid_count = 0;
  // Confusion matrix with fake as the positive class.
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  double tpr = 0.0, tnr = 0.0;
  double balanced_accuracy = 0.0;

  friend bool operator==(const QuestionStats&, const QuestionStats&) = default;
};

// Ranking score from raw yes/no counts:
//   S = 1/2 * ( correct_real / (y_real + n_real) + correct_fake / (y_fake + n_fake) )
// where a "no" is correct on reals and a "yes" on fakes when
// yes_means_anomaly, and the reverse otherwise. Denominators must be nonzero.
double balanced_accuracy_from_counts(std::size_t y_real, std::size_t n_real, std::size_t y_fake,
                                     std::size_t n_fake, bool yes_means_anomaly);

// (TPR + TNR) / 2 from a confusion matrix.
double balanced_accuracy_from_confusion(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn);

// Folds the records of one question. Throws DegenerateQuestion naming the
// empty side when no valid real or no valid fake answer exists, and
// InvalidArgument when a record belongs to another question.
QuestionStats aggregate(const ForgeryQuestion& question, std::span<const ResponseRecord> records);

struct DegenerateQuestion {
  std::string question_id;
  std::string side;  // "real", "fake" or "both"

  friend bool operator==(const DegenerateQuestion&, const DegenerateQuestion&) = default;
};

struct Assessment {
  std::vector<QuestionStats> stats;
  std::vector<DegenerateQuestion> degenerate;
};

// Groups records by question (bank order) and aggregates each; degenerate
// questions are collected instead of thrown.
Assessment aggregate_all(const QuestionBank& bank, std::span<const ResponseRecord> records);

struct RankedFeature {
  ForgeryQuestion question;
  QuestionStats stats;
  bool strong = false;
};

struct FeatureRanking {
  // Descending balanced accuracy, ties by ascending question_id.
  std::vector<RankedFeature> entries;
  double strong_threshold = kDefaultStrongThreshold;
  std::vector<DegenerateQuestion> degenerate;

  // entries is sorted, so the strong set is a prefix.
  std::span<const RankedFeature> strong() const noexcept;
  std::span<const RankedFeature> weak() const noexcept;
};

// Throws AllDegenerate on empty stats, InvalidArgument for a threshold
// outside [0,1] or a question id missing from the bank.
FeatureRanking rank(std::span<const QuestionStats> stats, const QuestionBank& bank, double strong_threshold,
                    std::vector<DegenerateQuestion> degenerate = {});

// Ranking report JSON (entries carry every QuestionStats field plus the
// question and a strong flag). Round-trips exactly.
std::string ranking_to_json(const FeatureRanking& ranking);
FeatureRanking ranking_from_json(std::string_view json);
void save_ranking(const FeatureRanking& ranking, const std::filesystem::path& path);
FeatureRanking load_ranking(const std::filesystem::path& path);

// SHA-256 of the canonical ranking JSON.
std::string ranking_digest(const FeatureRanking& ranking);

}  // namespace forgecap::mfa
