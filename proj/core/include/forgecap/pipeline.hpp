#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forgecap/backend.hpp"
#include "forgecap/error.hpp"
#include "forgecap/metrics.hpp"
#include "forgecap/mfa.hpp"
#include "forgecap/sfs.hpp"
#include "forgecap/wfs.hpp"

// Staged pipeline commands. Each stage reads and writes files in a run
// directory so it can be resumed and audited:
//   questions.json  responses.jsonl  ranking.json          (assess)
//   prompts.json  dataset.json  dataset.meta.json  build_report.json   (build-dataset)
//   predictions.jsonl  verdicts.jsonl  predictions.meta.json          (infer)
//   report.json                                             (evaluate)
//   ablation.csv  ablation/<dataset>/<variant>.predictions.jsonl       (ablate)
//   meta.json   run timestamps; the only file that differs between identical runs
namespace forgecap::pipeline {

namespace fs = std::filesystem;

enum class ExplanationMode { Template, Backend };

enum class AblationVariant { PretrainedOnly, NoSFS, WithSFS, EddOnly, Full };

std::string_view to_string(AblationVariant v) noexcept;
AblationVariant parse_variant(std::string_view s);
inline constexpr AblationVariant kAllVariants[] = {AblationVariant::PretrainedOnly, AblationVariant::NoSFS,
                                                   AblationVariant::WithSFS, AblationVariant::EddOnly,
                                                   AblationVariant::Full};

struct RunConfig {
  std::optional<BackendConfig> backend;            // model under assessment / base model
  std::optional<BackendConfig> finetuned_backend;  // model after strengthening
  std::optional<BackendConfig> teacher_backend;    // question generation, summaries, explanations

  std::optional<fs::path> assess_manifest;
  std::optional<fs::path> train_manifest;
  std::vector<fs::path> test_manifests;

  std::optional<fs::path> question_bank;  // generated via the teacher when absent
  std::size_t n_questions = mfa::kDefaultQuestionCount;
  std::string seed_prompt{mfa::kDefaultSeedPrompt};

  double strong_threshold = mfa::kDefaultStrongThreshold;
  std::optional<std::size_t> top_k;  // all strong features when absent
  ExplanationMode explanation_mode = ExplanationMode::Template;
  bool blend_scores_in_dataset = false;
  std::uint64_t shuffle_seed = 0;

  std::optional<fs::path> edd_scores;
  std::optional<std::string> edd_endpoint;
  double fusion_weight = wfs::kDefaultFusionWeight;
  bool inject_edd_into_prompt = true;

  std::optional<fs::path> ranking_path;      // default <output_dir>/ranking.json
  std::optional<fs::path> predictions_path;  // default <output_dir>/predictions.jsonl
  metrics::Level level = metrics::Level::Frame;
  metrics::VideoAggregation aggregation = metrics::VideoAggregation::Mean;
  std::vector<AblationVariant> variants;  // all when empty

  fs::path output_dir = "run";
};

// Process exit code for an error: 2 usage/config/input, 3 data degeneracy, 4 backend failure.
int exit_code_for(Errc code) noexcept;

struct AssessOutcome {
  mfa::FeatureRanking ranking;
  fs::path ranking_file;
  fs::path responses_file;
};
AssessOutcome run_assess(const RunConfig& cfg);

struct BuildOutcome {
  sfs::FinetuneDataset dataset;
  fs::path dataset_file;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
};
BuildOutcome run_build_dataset(const RunConfig& cfg);

struct InferOptions {
  double fusion_weight = wfs::kDefaultFusionWeight;
  bool inject_edd_into_prompt = true;
  bool query_model = true;  // false: EDD scores only (every image must be scored)
  unsigned max_parallel = 1;
};

struct InferResult {
  std::vector<wfs::FusedVerdict> verdicts;
  std::vector<metrics::ScoredPrediction> predictions;
  std::size_t unparseable = 0;
};

// Asks the fixed real/fake question for every image (with the EDD score
// appended when available and enabled), parses the verdict and fuses scores.
InferResult infer(const Backend* backend, const CorpusManifest& corpus, const wfs::EddScoreMap* edd,
                  const InferOptions& options);

struct InferOutcome {
  InferResult result;
  fs::path predictions_file;
};
// Uses the first test manifest.
InferOutcome run_infer(const RunConfig& cfg);

metrics::MetricReport run_evaluate(const RunConfig& cfg);

struct AblationRow {
  AblationVariant variant;
  std::string dataset;
  metrics::MetricReport report;
};
std::vector<AblationRow> run_ablate(const RunConfig& cfg);
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Human-readable summary of a run directory.
std::string run_report(const RunConfig& cfg);

// Serialized verdict records: {"image_id", "model_verdict", "model_score", "edd_score", "fused_score", "explanation"}
void write_verdicts(const std::vector<wfs::FusedVerdict>& verdicts, std::ostream& out);

std::string report_to_json(const metrics::MetricReport& report);

}  // namespace forgecap::pipeline
