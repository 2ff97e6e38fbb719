// forgecap: staged feature assessment, fine-tune dataset construction,
// inference with detector fusion, and evaluation for deepfake detection
// with vision-language models.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "forgecap/pipeline.hpp"

namespace {

using forgecap::BackendConfig;
using forgecap::BackendKind;
namespace pipeline = forgecap::pipeline;

struct BackendFlags {
  std::string endpoint;
  std::string fixture;
  std::string model = "default";
};

std::optional<BackendConfig> to_config(const BackendFlags& flags, double timeout, unsigned max_parallel,
                                       std::string_view role) {
  if (!flags.endpoint.empty() && !flags.fixture.empty())
    throw forgecap::Error(forgecap::Errc::Config,
                          std::string(role) + ": give either an endpoint or a scripted fixture, not both");
  if (flags.endpoint.empty() && flags.fixture.empty()) return std::nullopt;
  BackendConfig cfg;
  cfg.model_name = flags.model;
  cfg.timeout = forgecap::Seconds{timeout};
  cfg.max_parallel = max_parallel;
  if (!flags.endpoint.empty()) {
    cfg.kind = BackendKind::Remote;
    cfg.endpoint = flags.endpoint;
  } else {
    cfg.kind = BackendKind::Scripted;
    cfg.script_path = flags.fixture;
  }
  cfg.validate();
  return cfg;
}

std::vector<pipeline::AblationVariant> parse_variants(const std::string& list) {
  std::vector<pipeline::AblationVariant> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(pipeline::parse_variant(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forgecap - assess, strengthen and evaluate vision-language deepfake detectors"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI key = value file; command-line flags take precedence");

  BackendFlags model, teacher, finetuned;
  double timeout = 60.0;
  unsigned max_parallel = 1;
  double strong_threshold = forgecap::mfa::kDefaultStrongThreshold;
  std::optional<std::size_t> top_k;
  double fusion_weight = forgecap::wfs::kDefaultFusionWeight;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::string edd_scores, edd_endpoint, ranking;
  bool no_edd_prompt = false;

  app.add_option("--backend-endpoint", model.endpoint, "chat-completions base URL of the assessed model");
  app.add_option("--scripted-fixture", model.fixture, "scripted fixture JSONL standing in for the model");
  app.add_option("--model-name", model.model, "model name sent to the endpoint");
  app.add_option("--teacher-endpoint", teacher.endpoint, "teacher model base URL");
  app.add_option("--teacher-fixture", teacher.fixture, "scripted fixture for the teacher model");
  app.add_option("--teacher-model", teacher.model, "teacher model name");
  app.add_option("--finetuned-endpoint", finetuned.endpoint, "fine-tuned model base URL");
  app.add_option("--finetuned-fixture", finetuned.fixture, "scripted fixture for the fine-tuned model");
  app.add_option("--finetuned-model", finetuned.model, "fine-tuned model name");
  app.add_option("--timeout", timeout, "per-request timeout in seconds")->check(CLI::PositiveNumber);
  app.add_option("--max-parallel", max_parallel, "maximum concurrent backend requests")->check(CLI::Range(1u, 1024u));
  app.add_option("--strong-threshold", strong_threshold, "balanced accuracy cut for strong features")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--top-k", top_k, "number of strong features used for prompts (default: all)")
      ->check(CLI::PositiveNumber);
  app.add_option("--fusion-weight", fusion_weight, "weight of the EDD score in the fused score")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--seed", seed, "dataset shuffle seed");
  app.add_option("--out", out_dir, "run directory");
  app.add_option("--edd-scores", edd_scores, "EDD logits JSONL");
  app.add_option("--edd-endpoint", edd_endpoint, "EDD service base URL (POST /score)");
  app.add_option("--ranking", ranking, "ranking JSON (default: <out>/ranking.json)");
  app.add_flag("--no-edd-prompt", no_edd_prompt, "do not append the EDD score to inference prompts");

  std::string manifest;
  std::vector<std::string> manifests;
  std::string questions, seed_prompt_file, explanations = "template", predictions, level = "frame",
                                           aggregate = "mean", variants;
  std::size_t n_questions = forgecap::mfa::kDefaultQuestionCount;
  bool blend = false;

  auto* assess = app.add_subcommand("assess", "probe the model with forgery-feature questions and rank them");
  assess->add_option("--manifest", manifest, "assessment manifest JSONL")->required();
  assess->add_option("--questions", questions, "question bank JSON (generated by the teacher if omitted)");
  assess->add_option("--n-questions", n_questions, "questions to generate")->check(CLI::PositiveNumber);
  assess->add_option("--seed-prompt-file", seed_prompt_file, "teacher instruction for question generation");

  auto* build = app.add_subcommand("build-dataset", "build the VQA fine-tuning dataset from the ranking");
  build->add_option("--manifest", manifest, "training manifest JSONL")->required();
  build->add_option("--explanations", explanations, "template | backend")
      ->check(CLI::IsMember({"template", "backend"}));
  build->add_flag("--blend", blend, "append EDD blending statements to answers");

  auto* infer = app.add_subcommand("infer", "ask the fixed real/fake question and fuse EDD scores");
  infer->add_option("--manifest", manifest, "test manifest JSONL")->required();
  infer->add_option("--predictions", predictions, "output predictions JSONL (default: <out>/predictions.jsonl)");

  auto* evaluate = app.add_subcommand("evaluate", "compute AUC/AP/EER/accuracy for a predictions file");
  evaluate->add_option("--predictions", predictions, "predictions JSONL (default: <out>/predictions.jsonl)");
  evaluate->add_option("--level", level, "frame | video")->check(CLI::IsMember({"frame", "video"}));
  evaluate->add_option("--aggregate", aggregate, "frame-to-video aggregation: mean | median")
      ->check(CLI::IsMember({"mean", "median"}));

  auto* ablate = app.add_subcommand("ablate", "run every ablation variant and write ablation.csv");
  ablate->add_option("--manifest", manifests, "test manifest JSONL (repeatable)")->required();
  ablate->add_option("--variants", variants, "comma-separated subset of PretrainedOnly,NoSFS,WithSFS,EddOnly,Full");
  ablate->add_option("--level", level, "frame | video")->check(CLI::IsMember({"frame", "video"}));
  ablate->add_option("--aggregate", aggregate, "frame-to-video aggregation: mean | median")
      ->check(CLI::IsMember({"mean", "median"}));

  auto* report = app.add_subcommand("report", "summarize a run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    pipeline::RunConfig cfg;
    cfg.backend = to_config(model, timeout, max_parallel, "model backend");
    cfg.teacher_backend = to_config(teacher, timeout, max_parallel, "teacher backend");
    cfg.finetuned_backend = to_config(finetuned, timeout, max_parallel, "fine-tuned backend");
    cfg.strong_threshold = strong_threshold;
    cfg.top_k = top_k;
    cfg.fusion_weight = fusion_weight;
    cfg.shuffle_seed = seed;
    cfg.output_dir = out_dir;
    cfg.inject_edd_into_prompt = !no_edd_prompt;
    if (!edd_scores.empty()) cfg.edd_scores = edd_scores;
    if (!edd_endpoint.empty()) cfg.edd_endpoint = edd_endpoint;
    if (!ranking.empty()) cfg.ranking_path = ranking;
    if (!predictions.empty()) cfg.predictions_path = predictions;
    cfg.level = forgecap::metrics::parse_level(level);
    cfg.aggregation = forgecap::metrics::parse_aggregation(aggregate);

    if (*assess) {
      cfg.assess_manifest = manifest;
      if (!questions.empty()) cfg.question_bank = questions;
      cfg.n_questions = n_questions;
      if (!seed_prompt_file.empty()) {
        std::ifstream in(seed_prompt_file);
        if (!in) throw forgecap::Error(forgecap::Errc::Io, "cannot read " + seed_prompt_file);
        cfg.seed_prompt.assign(std::istreambuf_iterator<char>(in), {});
      }
      const auto outcome = pipeline::run_assess(cfg);
      std::cout << "ranked " << outcome.ranking.entries.size() << " questions (" << outcome.ranking.strong().size()
                << " strong, " << outcome.ranking.degenerate.size() << " degenerate) -> "
                << outcome.ranking_file.string() << "\n";
    } else if (*build) {
      cfg.train_manifest = manifest;
      cfg.explanation_mode =
          explanations == "backend" ? pipeline::ExplanationMode::Backend : pipeline::ExplanationMode::Template;
      cfg.blend_scores_in_dataset = blend;
      const auto outcome = pipeline::run_build_dataset(cfg);
      std::cout << "wrote " << outcome.dataset.samples.size() << " samples (" << outcome.n_real << " real, "
                << outcome.n_fake << " fake) -> " << outcome.dataset_file.string() << "\n";
    } else if (*infer) {
      cfg.test_manifests = {manifest};
      const auto outcome = pipeline::run_infer(cfg);
      std::cout << "scored " << outcome.result.predictions.size() << " images (" << outcome.result.unparseable
                << " unparseable) -> " << outcome.predictions_file.string() << "\n";
    } else if (*evaluate) {
      const auto r = pipeline::run_evaluate(cfg);
      std::cout << pipeline::report_to_json(r);
    } else if (*ablate) {
      cfg.test_manifests.assign(manifests.begin(), manifests.end());
      cfg.variants = parse_variants(variants);
      std::cout << pipeline::ablation_csv(pipeline::run_ablate(cfg));
    } else if (*report) {
      std::cout << pipeline::run_report(cfg);
    }
  } catch (const forgecap::Error& e) {
    std::cerr << "forgecap: " << e.what() << "\n";
    return pipeline::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "forgecap: internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
