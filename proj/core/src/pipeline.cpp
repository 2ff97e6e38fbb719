#include "forgecap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <json.hpp>

#include "forgecap/parallel.hpp"
#include "json_util.hpp"

namespace forgecap::pipeline {

using nlohmann::ordered_json;

std::string_view to_string(AblationVariant v) noexcept {
  switch (v) {
    case AblationVariant::PretrainedOnly: return "PretrainedOnly";
    case AblationVariant::NoSFS: return "NoSFS";
    case AblationVariant::WithSFS: return "WithSFS";
    case AblationVariant::EddOnly: return "EddOnly";
    case AblationVariant::Full: return "Full";
  }
  return "?";
}

AblationVariant parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  throw Error(Errc::Config, "unknown ablation variant '" + std::string(s) +
                                "' (expected PretrainedOnly, NoSFS, WithSFS, EddOnly or Full)");
}

int exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::DegenerateCorpus:
    case Errc::DegenerateQuestion:
    case Errc::AllDegenerate:
    case Errc::EmptyBank:
    case Errc::EmptyStrongSet:
    case Errc::MissingExplanation:
    case Errc::MissingScore:
    case Errc::OneClassOnly:
    case Errc::NoPositives:
    case Errc::MissingVideoId:
    case Errc::MixedLabelsInVideo:
      return 3;
    case Errc::ScriptMiss:
    case Errc::Timeout:
    case Errc::Unreachable:
    case Errc::BackendProtocol:
    case Errc::InsufficientQuestions:
      return 4;
    default:
      return 2;
  }
}

namespace {

fs::path prepare_output_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create output dir " + cfg.output_dir.string() + ": " + ec.message());
  return cfg.output_dir;
}

const fs::path& require_path(const std::optional<fs::path>& p, std::string_view what) {
  if (!p) throw Error(Errc::Config, std::string(what) + " is required");
  if (!fs::exists(*p)) throw Error(Errc::Io, std::string(what) + " not found: " + p->string());
  return *p;
}

const BackendConfig& require_backend(const std::optional<BackendConfig>& b, std::string_view what) {
  if (!b) throw Error(Errc::Config, std::string(what) + " is required");
  return *b;
}

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(
                                                   std::chrono::system_clock::now())));
}

// meta.json keeps one entry per command with its timestamps; everything
// else in the run directory is byte-stable.
void record_meta(const fs::path& dir, std::string_view command, ordered_json fields, const std::string& started) {
  const auto path = dir / "meta.json";
  ordered_json meta = ordered_json::object();
  if (fs::exists(path)) {
    try {
      meta = json_util::read_json_file(path);
    } catch (const Error&) {
      meta = ordered_json::object();
    }
  }
  fields["started_at"] = started;
  fields["finished_at"] = utc_now();
  meta[std::string(command)] = std::move(fields);
  json_util::write_json_file(path, meta);
}

void write_text(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << data;
  if (!out) throw Error(Errc::Io, "write failed for " + path.string());
}

std::optional<wfs::EddScoreMap> load_edd(const RunConfig& cfg, const CorpusManifest& corpus, unsigned max_parallel) {
  if (cfg.edd_scores) return wfs::load_edd_scores(require_path(cfg.edd_scores, "EDD score file"));
  if (cfg.edd_endpoint) {
    const Seconds timeout = cfg.backend ? cfg.backend->timeout : Seconds{60.0};
    return wfs::fetch_edd_scores(wfs::RemoteEdd(*cfg.edd_endpoint, timeout), corpus, max_parallel);
  }
  return std::nullopt;
}

ordered_json prompt_pair_json(const sfs::PromptPair& pair) {
  return {{"p_real", pair.p_real},
          {"p_fake", pair.p_fake},
          {"source_features_real", pair.source_features_real},
          {"source_features_fake", pair.source_features_fake}};
}

fs::path predictions_meta_path(const fs::path& predictions) {
  auto p = predictions;
  p.replace_filename(predictions.stem().string() + ".meta.json");
  return p;
}

}  // namespace

// --- assess -----------------------------------------------------------------

AssessOutcome run_assess(const RunConfig& cfg) {
  const std::string started = utc_now();
  const auto corpus = load_manifest(require_path(cfg.assess_manifest, "assessment manifest"));
  const auto& backend_cfg = require_backend(cfg.backend, "model backend");
  require_both_labels(corpus);
  const auto dir = prepare_output_dir(cfg);
  const auto backend = make_backend(backend_cfg);

  mfa::QuestionBank bank;
  if (cfg.question_bank) {
    bank = mfa::load_question_bank(require_path(cfg.question_bank, "question bank"));
  } else {
    const auto teacher = make_backend(require_backend(cfg.teacher_backend, "teacher backend (or --questions)"));
    bank = mfa::generate_questions(*teacher, cfg.n_questions, cfg.seed_prompt);
  }
  mfa::save_question_bank(bank, dir / "questions.json");

  // Completed records stream to a partial file so an aborted run keeps its work.
  const auto partial = dir / "responses.partial.jsonl";
  std::ofstream partial_out(partial, std::ios::binary);
  mfa::EvaluateOptions options;
  options.max_parallel = backend_cfg.max_parallel;
  options.on_record = [&](const mfa::ResponseRecord& r) {
    mfa::write_responses(std::span(&r, 1), partial_out);
    partial_out.flush();
  };
  const auto records = mfa::evaluate_questions(*backend, bank, corpus, options);
  partial_out.close();

  AssessOutcome out;
  out.responses_file = dir / "responses.jsonl";
  {
    std::ofstream resp(out.responses_file, std::ios::binary);
    mfa::write_responses(records, resp);
  }
  fs::remove(partial);

  auto assessment = mfa::aggregate_all(bank, records);
  out.ranking = mfa::rank(assessment.stats, bank, cfg.strong_threshold, std::move(assessment.degenerate));
  out.ranking_file = dir / "ranking.json";
  mfa::save_ranking(out.ranking, out.ranking_file);

  record_meta(dir, "assess",
              {{"backend", backend->identity()},
               {"manifest", corpus.name},
               {"questions", bank.n_q()},
               {"images", corpus.size()},
               {"ranking_digest", mfa::ranking_digest(out.ranking)}},
              started);
  return out;
}

// --- build-dataset ----------------------------------------------------------

BuildOutcome run_build_dataset(const RunConfig& cfg) {
  const std::string started = utc_now();
  const auto ranking_file = cfg.ranking_path.value_or(cfg.output_dir / "ranking.json");
  const auto ranking = mfa::load_ranking(require_path(ranking_file, "ranking file"));
  const auto corpus = load_manifest(require_path(cfg.train_manifest, "training manifest"));
  const auto dir = prepare_output_dir(cfg);

  std::unique_ptr<Backend> teacher;
  if (cfg.teacher_backend) teacher = make_backend(*cfg.teacher_backend);
  if (cfg.explanation_mode == ExplanationMode::Backend && !teacher)
    throw Error(Errc::Config, "backend explanation mode needs a teacher backend");

  const std::size_t top_k = cfg.top_k.value_or(ranking.strong().size());
  const auto pair = teacher ? sfs::summarize_prompts(*teacher, ranking, top_k) : sfs::template_prompts(ranking, top_k);
  json_util::write_json_file(dir / "prompts.json", prompt_pair_json(pair));

  std::optional<std::map<std::string, double>> scores;
  if (cfg.blend_scores_in_dataset) {
    auto edd = load_edd(cfg, corpus, cfg.teacher_backend ? cfg.teacher_backend->max_parallel : 1);
    if (!edd) throw Error(Errc::Config, "blending scores requested but no EDD score source configured");
    scores = wfs::score_values(*edd);
  }

  std::unique_ptr<sfs::ExplanationSource> source;
  if (cfg.explanation_mode == ExplanationMode::Backend)
    source = std::make_unique<sfs::BackendExplanations>(*teacher, pair, cfg.teacher_backend->max_parallel);
  else
    source = std::make_unique<sfs::TemplateExplanations>(pair);

  sfs::BuildOptions options;
  options.shuffle_seed = cfg.shuffle_seed;
  options.ranking_digest = mfa::ranking_digest(ranking);
  options.blending_scores = scores ? &*scores : nullptr;

  BuildOutcome out;
  out.dataset = sfs::build_dataset(corpus, *source, options);
  out.dataset_file = dir / "dataset.json";
  sfs::export_dataset(out.dataset, out.dataset_file);
  for (const auto& s : out.dataset.samples) ++(s.label == Label::Real ? out.n_real : out.n_fake);

  ordered_json report;
  report["manifest"] = corpus.name;
  report["samples"] = out.dataset.samples.size();
  report["n_real"] = out.n_real;
  report["n_fake"] = out.n_fake;
  report["top_k"] = top_k;
  report["features"] = pair.source_features_fake;
  report["explanation_mode"] = cfg.explanation_mode == ExplanationMode::Backend ? "backend" : "template";
  report["blending_scores"] = cfg.blend_scores_in_dataset;
  report["shuffle_seed"] = cfg.shuffle_seed;
  report["ranking_digest"] = out.dataset.ranking_digest;
  report["dataset_digest"] = sfs::dataset_digest(out.dataset);
  json_util::write_json_file(dir / "build_report.json", report);

  record_meta(dir, "build-dataset",
              {{"teacher", teacher ? teacher->identity() : std::string("none")}, {"manifest", corpus.name}}, started);
  return out;
}

// --- infer ------------------------------------------------------------------

InferResult infer(const Backend* backend, const CorpusManifest& corpus, const wfs::EddScoreMap* edd,
                  const InferOptions& options) {
  if (options.query_model && !backend) throw Error(Errc::Config, "inference needs a model backend");
  std::vector<wfs::FusedVerdict> verdicts(corpus.size());

  parallel_for(corpus.size(), options.max_parallel, [&](std::size_t i) {
    const auto& image = corpus.records[i];
    wfs::FusedVerdict v;
    v.image_id = image.image_id;
    if (edd) {
      if (auto it = edd->find(image.image_id); it != edd->end()) v.edd_score = it->second.score;
    }
    if (!options.query_model) {
      if (!v.edd_score) throw Error(Errc::MissingScore, image.image_id);
      v.fused_score = wfs::fuse(v.model_score, v.edd_score, 1.0);
    } else {
      std::string prompt(sfs::kFixedPrompt);
      if (v.edd_score && options.inject_edd_into_prompt) prompt = wfs::inject_score_into_prompt(prompt, *v.edd_score);
      const ModelReply reply = backend->ask(image, prompt);
      auto parsed = wfs::parse_verdict(reply.text);
      v.model_verdict = parsed.verdict;
      v.model_score = wfs::model_score(parsed.verdict, reply.fake_probability);
      v.fused_score = wfs::fuse(v.model_score, v.edd_score, options.fusion_weight);
      v.explanation = std::move(parsed.explanation);
    }
    verdicts[i] = std::move(v);
  });

  InferResult result;
  result.predictions.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& image = corpus.records[i];
    if (options.query_model && verdicts[i].model_verdict == wfs::Verdict::Unparseable) ++result.unparseable;
    result.predictions.push_back({image.image_id, image.video_id, image.label, verdicts[i].fused_score});
  }
  result.verdicts = std::move(verdicts);
  return result;
}

void write_verdicts(const std::vector<wfs::FusedVerdict>& verdicts, std::ostream& out) {
  for (const auto& v : verdicts) {
    ordered_json j;
    j["image_id"] = v.image_id;
    j["model_verdict"] = wfs::to_string(v.model_verdict);
    j["model_score"] = v.model_score;
    j["edd_score"] = v.edd_score ? ordered_json(*v.edd_score) : ordered_json(nullptr);
    j["fused_score"] = v.fused_score;
    j["explanation"] = v.explanation;
    out << j.dump() << '\n';
  }
}

InferOutcome run_infer(const RunConfig& cfg) {
  const std::string started = utc_now();
  if (cfg.test_manifests.empty()) throw Error(Errc::Config, "a test manifest is required");
  const auto corpus = load_manifest(require_path(std::optional(cfg.test_manifests.front()), "test manifest"));
  const auto& backend_cfg = require_backend(cfg.backend, "model backend");
  const auto dir = prepare_output_dir(cfg);
  const auto backend = make_backend(backend_cfg);
  const auto edd = load_edd(cfg, corpus, backend_cfg.max_parallel);

  InferOptions options;
  options.fusion_weight = cfg.fusion_weight;
  options.inject_edd_into_prompt = cfg.inject_edd_into_prompt;
  options.max_parallel = backend_cfg.max_parallel;

  InferOutcome out;
  out.result = infer(backend.get(), corpus, edd ? &*edd : nullptr, options);
  out.predictions_file = cfg.predictions_path.value_or(dir / "predictions.jsonl");
  {
    std::ofstream preds(out.predictions_file, std::ios::binary);
    if (!preds) throw Error(Errc::Io, "cannot write " + out.predictions_file.string());
    metrics::write_predictions(out.result.predictions, preds);
  }
  {
    std::ofstream verdicts(dir / "verdicts.jsonl", std::ios::binary);
    write_verdicts(out.result.verdicts, verdicts);
  }

  ordered_json meta;
  meta["backend"] = backend->identity();
  meta["manifest"] = corpus.name;
  meta["fusion_weight"] = cfg.fusion_weight;
  meta["edd_source"] = cfg.edd_scores ? cfg.edd_scores->generic_string() : cfg.edd_endpoint.value_or("none");
  meta["edd_in_prompt"] = cfg.inject_edd_into_prompt;
  const auto ranking_file = cfg.ranking_path.value_or(dir / "ranking.json");
  meta["ranking_digest"] = fs::exists(ranking_file) ? mfa::ranking_digest(mfa::load_ranking(ranking_file)) : "";
  meta["images"] = corpus.size();
  meta["unparseable"] = out.result.unparseable;
  json_util::write_json_file(predictions_meta_path(out.predictions_file), meta);

  record_meta(dir, "infer", {{"backend", backend->identity()}, {"manifest", corpus.name}}, started);
  return out;
}

// --- evaluate ---------------------------------------------------------------

std::string report_to_json(const metrics::MetricReport& r) {
  ordered_json j;
  j["level"] = metrics::to_string(r.level);
  j["auc"] = r.auc;
  j["ap"] = r.ap;
  j["eer"] = r.eer;
  j["acc_at_half"] = r.acc_at_half;
  j["n_real"] = r.n_real;
  j["n_fake"] = r.n_fake;
  return j.dump(2) + "\n";
}

metrics::MetricReport run_evaluate(const RunConfig& cfg) {
  const std::string started = utc_now();
  const auto path = cfg.predictions_path.value_or(cfg.output_dir / "predictions.jsonl");
  const auto preds = metrics::load_predictions(require_path(std::optional(path), "predictions file"));
  const auto dir = prepare_output_dir(cfg);
  const auto report = metrics::evaluate(preds, cfg.level, cfg.aggregation);

  auto j = ordered_json::parse(report_to_json(report));
  if (cfg.level == metrics::Level::Video)
    j["aggregation"] = cfg.aggregation == metrics::VideoAggregation::Mean ? "mean" : "median";
  const auto meta_path = predictions_meta_path(path);
  j["run"] = fs::exists(meta_path) ? json_util::read_json_file(meta_path) : ordered_json::object();
  json_util::write_json_file(dir / "report.json", j);
  record_meta(dir, "evaluate", {{"predictions", path.generic_string()}}, started);
  return report;
}

// --- ablate -----------------------------------------------------------------

namespace {

bool needs_base(AblationVariant v) { return v == AblationVariant::PretrainedOnly || v == AblationVariant::NoSFS; }
bool needs_finetuned(AblationVariant v) { return v == AblationVariant::WithSFS || v == AblationVariant::Full; }
bool needs_edd(AblationVariant v) {
  return v == AblationVariant::NoSFS || v == AblationVariant::EddOnly || v == AblationVariant::Full;
}

}  // namespace

std::vector<AblationRow> run_ablate(const RunConfig& cfg) {
  const std::string started = utc_now();
  const std::vector<AblationVariant> variants =
      cfg.variants.empty() ? std::vector<AblationVariant>(std::begin(kAllVariants), std::end(kAllVariants))
                           : cfg.variants;
  if (cfg.test_manifests.empty()) throw Error(Errc::Config, "ablate needs at least one test manifest");
  for (auto v : variants) {
    if (needs_base(v) && !cfg.backend)
      throw Error(Errc::Config, "variant " + std::string(to_string(v)) + " needs the base model backend");
    if (needs_finetuned(v) && !cfg.finetuned_backend)
      throw Error(Errc::Config, "variant " + std::string(to_string(v)) +
                                    " needs a fine-tuned backend (--finetuned-endpoint or --finetuned-fixture)");
    if (needs_edd(v) && !cfg.edd_scores && !cfg.edd_endpoint)
      throw Error(Errc::Config, "variant " + std::string(to_string(v)) + " needs EDD scores");
  }
  for (const auto& m : cfg.test_manifests) require_path(std::optional(m), "test manifest");

  const auto dir = prepare_output_dir(cfg);
  std::unique_ptr<Backend> base, finetuned;
  if (cfg.backend) base = make_backend(*cfg.backend);
  if (cfg.finetuned_backend) finetuned = make_backend(*cfg.finetuned_backend);
  const unsigned max_parallel = std::max(cfg.backend ? cfg.backend->max_parallel : 1u,
                                         cfg.finetuned_backend ? cfg.finetuned_backend->max_parallel : 1u);

  std::vector<AblationRow> rows;
  for (const auto& manifest_path : cfg.test_manifests) {
    const auto corpus = load_manifest(manifest_path);
    std::optional<wfs::EddScoreMap> edd;
    if (std::any_of(variants.begin(), variants.end(), needs_edd)) edd = load_edd(cfg, corpus, max_parallel);
    const auto variant_dir = dir / "ablation" / corpus.name;
    fs::create_directories(variant_dir);

    for (auto v : variants) {
      InferOptions options;
      options.max_parallel = max_parallel;
      options.inject_edd_into_prompt = cfg.inject_edd_into_prompt;
      const Backend* model = needs_finetuned(v) ? finetuned.get() : base.get();
      const wfs::EddScoreMap* scores = needs_edd(v) ? &*edd : nullptr;
      options.fusion_weight = v == AblationVariant::EddOnly ? 1.0 : cfg.fusion_weight;
      options.query_model = v != AblationVariant::EddOnly;

      const auto result = infer(options.query_model ? model : nullptr, corpus, scores, options);
      {
        std::ofstream out(variant_dir / (std::string(to_string(v)) + ".predictions.jsonl"), std::ios::binary);
        metrics::write_predictions(result.predictions, out);
      }
      rows.push_back({v, corpus.name, metrics::evaluate(result.predictions, cfg.level, cfg.aggregation)});
    }
  }
  write_text(dir / "ablation.csv", ablation_csv(rows));
  record_meta(dir, "ablate", {{"variants", variants.size()}, {"datasets", cfg.test_manifests.size()}}, started);
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string csv = "variant,dataset,level,auc,ap,eer,acc,n_real,n_fake\n";
  auto line = [&](std::string_view variant, std::string_view dataset, const metrics::MetricReport& r) {
    csv += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{},{}\n", variant, dataset, metrics::to_string(r.level),
                       r.auc, r.ap, r.eer, r.acc_at_half, r.n_real, r.n_fake);
  };
  std::vector<std::string> datasets;
  for (const auto& row : rows) {
    line(to_string(row.variant), row.dataset, row.report);
    if (std::find(datasets.begin(), datasets.end(), row.dataset) == datasets.end()) datasets.push_back(row.dataset);
  }
  // Unweighted mean across datasets, one row per variant.
  if (datasets.size() > 1) {
    for (auto v : kAllVariants) {
      metrics::MetricReport avg;
      std::size_t n = 0;
      for (const auto& row : rows) {
        if (row.variant != v) continue;
        avg.level = row.report.level;
        avg.auc += row.report.auc;
        avg.ap += row.report.ap;
        avg.eer += row.report.eer;
        avg.acc_at_half += row.report.acc_at_half;
        avg.n_real += row.report.n_real;
        avg.n_fake += row.report.n_fake;
        ++n;
      }
      if (n == 0) continue;
      const double k = static_cast<double>(n);
      avg.auc /= k;
      avg.ap /= k;
      avg.eer /= k;
      avg.acc_at_half /= k;
      line(to_string(v), "avg", avg);
    }
  }
  return csv;
}

// --- report -----------------------------------------------------------------

std::string run_report(const RunConfig& cfg) {
  std::ostringstream out;
  const auto& dir = cfg.output_dir;
  if (!fs::exists(dir)) throw Error(Errc::Io, "run directory not found: " + dir.string());
  out << "run directory: " << dir.string() << "\n";

  const auto ranking_file = cfg.ranking_path.value_or(dir / "ranking.json");
  if (fs::exists(ranking_file)) {
    const auto ranking = mfa::load_ranking(ranking_file);
    out << fmt::format("\nfeature ranking (strong threshold {:.2f}, digest {})\n", ranking.strong_threshold,
                       mfa::ranking_digest(ranking).substr(0, 12));
    std::size_t pos = 0;
    for (const auto& e : ranking.entries)
      out << fmt::format("  {:>3}. [{}] {:.4f}  {}  ({})\n", ++pos, e.strong ? "strong" : "weak  ",
                         e.stats.balanced_accuracy, e.question.feature, e.question.question_id);
    for (const auto& d : ranking.degenerate)
      out << fmt::format("   --  [degenerate:{}] {}\n", d.side, d.question_id);
  }
  if (const auto p = dir / "build_report.json"; fs::exists(p)) {
    const auto j = json_util::read_json_file(p);
    out << fmt::format("\nfine-tune dataset: {} samples ({} real, {} fake), blending scores: {}\n",
                       j.value("samples", 0), j.value("n_real", 0), j.value("n_fake", 0),
                       j.value("blending_scores", false) ? "yes" : "no");
  }
  if (const auto p = dir / "report.json"; fs::exists(p)) {
    const auto j = json_util::read_json_file(p);
    out << fmt::format("\n{}-level metrics: AUC {:.4f}  AP {:.4f}  EER {:.4f}  Acc {:.4f}  ({} real / {} fake)\n",
                       j.value("level", "frame"), j.value("auc", 0.0), j.value("ap", 0.0), j.value("eer", 0.0),
                       j.value("acc_at_half", 0.0), j.value("n_real", 0), j.value("n_fake", 0));
  }
  if (const auto p = dir / "ablation.csv"; fs::exists(p)) {
    std::ifstream in(p);
    out << "\nablation:\n" << in.rdbuf();
  }
  return out.str();
}

}  // namespace forgecap::pipeline
