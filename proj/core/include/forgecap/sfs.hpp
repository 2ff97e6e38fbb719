#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forgecap/backend.hpp"
#include "forgecap/manifest.hpp"
#include "forgecap/mfa.hpp"

// Strong-feature strengthening: turn the strongest assessed features into
// explanation prompts and a VQA-style fine-tuning dataset.
namespace forgecap::sfs {

inline constexpr std::string_view kFixedPrompt = "Is this image real or fake?";
inline constexpr std::string_view kImageToken = "<image>\n";
inline constexpr double kObviousBlendingThreshold = 0.5;

struct PromptPair {
  std::string p_real;
  std::string p_fake;
  std::vector<std::string> source_features_real;
  std::vector<std::string> source_features_fake;

  friend bool operator==(const PromptPair&, const PromptPair&) = default;
};

// Teacher request texts used by summarize_prompts.
std::string fake_summary_request(const std::vector<std::string>& features);
std::string real_summary_request(const std::vector<std::string>& features);

// Asks the teacher to condense the top_k strong features into one prompt for
// explaining fake images and one for real images. top_k = 0 or
// top_k > |strong| is InvalidArgument; an empty strong set is EmptyStrongSet.
PromptPair summarize_prompts(const Backend& teacher, const mfa::FeatureRanking& ranking, std::size_t top_k);

// Offline prompt pair built from the feature names without a teacher.
PromptPair template_prompts(const mfa::FeatureRanking& ranking, std::size_t top_k);

// "This image is {real|fake}. {explanation}" plus, when a blending score is
// given, " By the observation of the blending expert, blending score: {s:.2f}.
// And this image contains {obvious|minimal} blending artifacts." (obvious iff s >= 0.5).
std::string build_answer(Label label, std::string_view explanation, std::optional<double> blending_score);

// The blending sentence alone (no leading space).
std::string blending_statement(double blending_score);

struct VqaSample {
  std::string image_id;
  std::filesystem::path image_path;
  std::string fixed_prompt{kFixedPrompt};
  std::string answer;
  Label label = Label::Real;
  std::optional<std::string> blending_statement;
  std::optional<double> blending_score;

  friend bool operator==(const VqaSample&, const VqaSample&) = default;
};

struct FinetuneDataset {
  std::vector<VqaSample> samples;
  std::string manifest_name;
  std::string ranking_digest;
  std::uint64_t shuffle_seed = 0;

  friend bool operator==(const FinetuneDataset&, const FinetuneDataset&) = default;
};

// Where per-image explanations come from.
class ExplanationSource {
 public:
  virtual ~ExplanationSource() = default;
  // Empty return means "no explanation available" (MissingExplanation).
  virtual std::string explain(const ImageRecord& image) const = 0;
  // Upper bound on concurrent explain() calls.
  virtual unsigned max_parallel() const { return 1; }
};

// Deterministic explanations instantiated from the prompt pair's feature lists.
class TemplateExplanations final : public ExplanationSource {
 public:
  explicit TemplateExplanations(PromptPair pair) : pair_(std::move(pair)) {}
  std::string explain(const ImageRecord& image) const override;

 private:
  PromptPair pair_;
};

// Asks a (teacher) backend to explain each image with p_real / p_fake.
class BackendExplanations final : public ExplanationSource {
 public:
  BackendExplanations(const Backend& backend, PromptPair pair, unsigned max_parallel = 1)
      : backend_(backend), pair_(std::move(pair)), max_parallel_(max_parallel) {}
  std::string explain(const ImageRecord& image) const override;
  unsigned max_parallel() const override { return max_parallel_; }

 private:
  const Backend& backend_;
  PromptPair pair_;
  unsigned max_parallel_;
};

// Precomputed image_id -> explanation table.
class MappedExplanations final : public ExplanationSource {
 public:
  explicit MappedExplanations(std::map<std::string, std::string> table) : table_(std::move(table)) {}
  std::string explain(const ImageRecord& image) const override;

 private:
  std::map<std::string, std::string> table_;
};

struct BuildOptions {
  std::uint64_t shuffle_seed = 0;
  std::string ranking_digest;
  // When set, every image must have a score (else MissingScore) and each
  // answer carries the blending statement.
  const std::map<std::string, double>* blending_scores = nullptr;
};

// One sample per corpus record, shuffled deterministically by the seed.
FinetuneDataset build_dataset(const CorpusManifest& corpus, const ExplanationSource& explanations,
                              const BuildOptions& options);

// Seeded Fisher-Yates over [0, n); identical on every platform.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

// Conversation-format JSON array:
//   [{"id", "image", "conversations": [{"from": "human", "value": "<image>\nIs this image real or fake?"},
//                                      {"from": "gpt", "value": answer}], "label", "blending_score"}]
// plus a sidecar "<stem>.meta.json" holding manifest_name, ranking_digest,
// shuffle_seed and the dataset digest.
void export_dataset(const FinetuneDataset& dataset, const std::filesystem::path& path);
FinetuneDataset import_dataset(const std::filesystem::path& path);
std::filesystem::path meta_path_for(const std::filesystem::path& dataset_path);

std::string dataset_to_json(const FinetuneDataset& dataset);
std::string dataset_digest(const FinetuneDataset& dataset);

}  // namespace forgecap::sfs
