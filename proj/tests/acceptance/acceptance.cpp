// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "forgecap/error.hpp"
#include "forgecap/metrics.hpp"
#include "forgecap/mfa.hpp"
#include "forgecap/pipeline.hpp"
#include "forgecap/sfs.hpp"
#include "forgecap/wfs.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace forgecap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// --- metric oracle suite ------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  double worst = 0.0, worst_transform = 0.0;
  std::size_t sets = 0;
  for (; sets < 2000; ++sets) {
    const std::size_t n = 2 + rng() % 11;
    const int grid = 2 + int(rng() % 12);
    std::vector<metrics::ScoredPrediction> p;
    for (std::size_t i = 0; i < n; ++i) {
      const Label l = i == 0 ? Label::Real : i == 1 ? Label::Fake : ((rng() & 1) ? Label::Fake : Label::Real);
      const double s = (sets % 2) ? double(rng() % (grid + 1)) / grid : std::uniform_real_distribution<>(0, 1)(rng);
      p.push_back({"id" + std::to_string(i), std::nullopt, l, s});
    }
    std::shuffle(p.begin(), p.end(), rng);
    worst = std::max({worst, std::abs(metrics::auc(p) - oracle::auc_pairs(p)),
                      std::abs(metrics::auc(p) - oracle::auc_trapezoid(p)),
                      std::abs(metrics::average_precision(p) - oracle::ap_rank_walk(p)),
                      std::abs(metrics::eer(p) - oracle::eer_sweep(p))});
    auto q = p;
    for (auto& x : q) x.score = x.score * x.score * x.score;
    worst_transform = std::max(worst_transform, std::abs(metrics::auc(p) - metrics::auc(q)));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && worst_transform <= 1e-12 && t < 30.0,
          fmt::format("{} sets, max oracle diff {:.2e}, max transform diff {:.2e}, {:.2f}s", sets, worst,
                      worst_transform, t)};
}

// --- ranking score equivalence ------------------------------------------------

Outcome ba_equivalence() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  const std::size_t trials = 5000;
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t yr = rng() % 1000, nr = rng() % 1000 + (yr == 0), yf = rng() % 1000, nf = rng() % 1000 + (yf == 0);
    const bool yes_means_anomaly = rng() & 1;
    const double s = mfa::balanced_accuracy_from_counts(yr, nr, yf, nf, yes_means_anomaly);
    // independent confusion matrix (fake positive)
    const double tp = double(yes_means_anomaly ? yf : nf), fn = double(yes_means_anomaly ? nf : yf);
    const double tn = double(yes_means_anomaly ? nr : yr), fp = double(yes_means_anomaly ? yr : nr);
    const double tpr = tp / (tp + fn), tnr = tn / (tn + fp);
    worst = std::max(worst, std::abs(s - (tpr + tnr) / 2.0));
  }
  return {worst <= 1e-12, fmt::format("{} matrices, max diff {:.2e}", trials, worst)};
}

// --- ranking ------------------------------------------------------------------

Outcome ranking_oracle() {
  std::mt19937_64 rng(99);
  std::size_t trials = 0, mismatches = 0, degenerate_errors = 0;
  for (; trials < 500; ++trials) {
    // random stats on a coarse grid so ties are frequent
    const std::size_t k = 1 + rng() % 20;
    mfa::QuestionBank bank;
    std::vector<mfa::QuestionStats> stats;
    std::vector<std::size_t> ids(k);
    for (std::size_t i = 0; i < k; ++i) ids[i] = i;
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < k; ++i) {
      const auto id = fmt::format("q{:03}", ids[i]);
      bank.questions.push_back({id, "f" + id, "Q" + id + "?", true});
      mfa::QuestionStats s;
      s.question_id = id;
      s.balanced_accuracy = double(rng() % 9) / 8.0;
      stats.push_back(s);
    }
    const double threshold = double(rng() % 9) / 8.0;
    const auto ranking = mfa::rank(stats, bank, threshold);

    // selection-sort oracle
    auto pool = stats;
    std::vector<std::string> expect;
    while (!pool.empty()) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < pool.size(); ++i) {
        const auto& a = pool[i];
        const auto& b = pool[best];
        if (a.balanced_accuracy > b.balanced_accuracy ||
            (a.balanced_accuracy == b.balanced_accuracy && a.question_id < b.question_id))
          best = i;
      }
      expect.push_back(pool[best].question_id);
      pool.erase(pool.begin() + std::ptrdiff_t(best));
    }
    bool ok = ranking.entries.size() == expect.size();
    for (std::size_t i = 0; ok && i < expect.size(); ++i) {
      const auto& e = ranking.entries[i];
      ok = e.question.question_id == expect[i] && e.strong == (e.stats.balanced_accuracy >= threshold);
    }
    if (!ok) ++mismatches;

    // degenerate questions: drop one side's valid answers at random
    std::vector<mfa::ResponseRecord> records;
    std::set<std::string> want_degenerate;
    for (const auto& q : bank.questions) {
      const int kind = int(rng() % 4);  // 0: fine, 1: no real, 2: no fake, 3: neither
      for (int i = 0; i < 6; ++i) {
        const Label l = i < 3 ? Label::Real : Label::Fake;
        const bool starve = (l == Label::Real && (kind == 1 || kind == 3)) || (l == Label::Fake && kind >= 2);
        const YesNo a = starve ? YesNo::Invalid : ((rng() & 1) ? YesNo::Yes : YesNo::No);
        records.push_back({q.question_id, "img" + std::to_string(i), l, a});
      }
      if (kind != 0) want_degenerate.insert(q.question_id);
    }
    const auto assessment = mfa::aggregate_all(bank, records);
    std::set<std::string> got;
    for (const auto& d : assessment.degenerate) got.insert(d.question_id);
    if (got != want_degenerate || assessment.stats.size() + got.size() != bank.n_q()) ++degenerate_errors;
    if (assessment.stats.empty()) {
      try {
        mfa::rank(assessment.stats, bank, threshold, assessment.degenerate);
        ++degenerate_errors;
      } catch (const Error& e) {
        if (e.code() != Errc::AllDegenerate) ++degenerate_errors;
      }
    } else {
      const auto r = mfa::rank(assessment.stats, bank, threshold, assessment.degenerate);
      for (const auto& e : r.entries)
        if (want_degenerate.count(e.question.question_id)) ++degenerate_errors;
      if (r.degenerate.size() != want_degenerate.size()) ++degenerate_errors;
    }
  }
  return {mismatches == 0 && degenerate_errors == 0,
          fmt::format("{} random sets, {} order mismatches, {} degenerate-handling errors", trials, mismatches,
                      degenerate_errors)};
}

// --- synthetic assessment -----------------------------------------------------

Outcome synthetic_mfa() {
  const auto t0 = Clock::now();
  const auto corpus = synthetic::corpus(100, 100, "mfa");
  mfa::QuestionBank bank;
  bank.questions.push_back({"qA", "face layout", "Is the face layout unnatural?", true});
  bank.questions.push_back({"qB", "lighting", "Is the lighting inconsistent?", true});
  std::mt19937_64 rng(4242);
  ScriptedBackend backend("mfa");
  synthetic::script_question(backend, bank.questions[0], corpus, 0.9, rng);
  synthetic::script_question(backend, bank.questions[1], corpus, 0.55, rng);

  mfa::EvaluateOptions options;
  options.max_parallel = 4;
  const auto records = mfa::evaluate_questions(backend, bank, corpus, options);
  const auto assessment = mfa::aggregate_all(bank, records);
  const auto ranking = mfa::rank(assessment.stats, bank, 0.6, assessment.degenerate);
  double sa = 0, sb = 0;
  for (const auto& e : ranking.entries) (e.question.question_id == "qA" ? sa : sb) = e.stats.balanced_accuracy;
  const auto strong = ranking.strong();
  const bool strong_ok = strong.size() == 1 && strong[0].question.question_id == "qA";
  const double t = seconds_since(t0);
  return {sa > sb && strong_ok && std::abs(sa - 0.9) <= 0.06 && std::abs(sb - 0.55) <= 0.08 && t < 10.0,
          fmt::format("S_A={:.4f} S_B={:.4f} strong={{{}}} {:.2f}s", sa, sb, strong_ok ? "qA" : "?", t)};
}

// --- answer round-trip --------------------------------------------------------

Outcome answer_roundtrip() {
  std::size_t cases = 0, failures = 0;
  auto check = [&](Label l, const std::string& expl, double s) {
    ++cases;
    const auto answer = sfs::build_answer(l, expl, s);
    const auto v = wfs::parse_verdict(answer);
    const auto band = wfs::parse_blending_band(answer);
    const bool ok = v.verdict == (l == Label::Fake ? wfs::Verdict::Fake : wfs::Verdict::Real) &&
                    band == (s >= 0.5 ? wfs::BlendingBand::Obvious : wfs::BlendingBand::Minimal) &&
                    v.explanation.rfind(expl, 0) == 0;
    if (!ok) ++failures;
  };
  for (Label l : {Label::Real, Label::Fake})
    for (double s : {0.07, 0.93}) check(l, "The face layout is unnatural.", s);
  std::mt19937_64 rng(5);
  const std::vector<std::string> words = {"skin", "texture", "jaw", "is", "warped", "natural", "lighting", "edges"};
  for (int i = 0; i < 100; ++i) {
    std::string expl = "The";
    for (int w = 0, n = 1 + int(rng() % 12); w < n; ++w) expl += " " + words[rng() % words.size()];
    expl += ".";
    check((rng() & 1) ? Label::Fake : Label::Real, expl, std::uniform_real_distribution<>(0, 1)(rng));
  }
  return {failures == 0, fmt::format("{} cases, {} failures", cases, failures)};
}

// --- ablation ----------------------------------------------------------------

Outcome ablation() {
  const auto t0 = Clock::now();
  const auto dir = synthetic::fresh_dir("acceptance_ablation");
  const auto corpus = synthetic::corpus(250, 250, "synthetic");
  save_manifest(corpus, dir / "synthetic.jsonl");
  std::mt19937_64 rng(31337);
  // reals ~ N(0,1), fakes ~ N(shift,1): AUC = Phi(shift / sqrt 2) = 0.80
  const double shift = std::sqrt(2.0) * 0.8416212335729143;
  const auto edd = synthetic::edd_scores(corpus, shift, rng);
  {
    std::ofstream out(dir / "edd.jsonl");
    wfs::write_edd_scores(edd, out);
  }
  ScriptedBackend base("base"), tuned("tuned");
  synthetic::script_verdicts(base, corpus, 0.6, rng);
  synthetic::script_verdicts(base, corpus, 0.6, rng, &edd);
  synthetic::script_verdicts(tuned, corpus, 0.75, rng);
  synthetic::script_verdicts(tuned, corpus, 0.75, rng, &edd);
  base.save(dir / "base.jsonl");
  tuned.save(dir / "tuned.jsonl");

  pipeline::RunConfig cfg;
  cfg.backend = BackendConfig{};
  cfg.backend->script_path = dir / "base.jsonl";
  cfg.finetuned_backend = BackendConfig{};
  cfg.finetuned_backend->script_path = dir / "tuned.jsonl";
  cfg.finetuned_backend->max_parallel = 4;
  cfg.edd_scores = dir / "edd.jsonl";
  cfg.test_manifests = {dir / "synthetic.jsonl"};
  cfg.output_dir = dir / "run";
  const auto rows = pipeline::run_ablate(cfg);

  double full = 0, with_sfs = 0, edd_only = 0;
  for (const auto& r : rows) {
    if (r.variant == pipeline::AblationVariant::Full) full = r.report.auc;
    if (r.variant == pipeline::AblationVariant::WithSFS) with_sfs = r.report.auc;
    if (r.variant == pipeline::AblationVariant::EddOnly) edd_only = r.report.auc;
  }
  std::ifstream csv(dir / "run" / "ablation.csv");
  std::string line;
  std::set<std::string> variants;
  std::getline(csv, line);
  const bool header_ok = line == "variant,dataset,level,auc,ap,eer,acc,n_real,n_fake";
  while (std::getline(csv, line)) variants.insert(line.substr(0, line.find(',')));
  const bool csv_ok = header_ok && variants.size() == 5 && rows.size() == 5;
  const double t = seconds_since(t0);
  return {full > std::max(with_sfs, edd_only) && csv_ok && t < 60.0,
          fmt::format("AUC Full={:.4f} model-only={:.4f} EDD-only={:.4f}, csv rows={} {:.2f}s", full, with_sfs,
                      edd_only, variants.size(), t)};
}

// --- format stability -------------------------------------------------------

Outcome format_stability() {
  const auto dir = synthetic::fresh_dir("acceptance_formats");
  auto corpus = synthetic::corpus(40, 40, "train", 4);
  corpus.records[3].video_id.reset();
  save_manifest(corpus, dir / "train.jsonl");
  const auto manifest_bytes = synthetic::slurp(dir / "train.jsonl");
  save_manifest(load_manifest(dir / "train.jsonl"), dir / "train2.jsonl");
  const bool manifest_ok = synthetic::slurp(dir / "train2.jsonl") == manifest_bytes;

  mfa::QuestionBank bank;
  bank.questions.push_back({"q000", "face layout", "Is the face layout unnatural?", true});
  bank.questions.push_back({"q001", "skin texture", "Is the skin texture waxy?", true});
  mfa::QuestionStats a, b;
  a.question_id = "q000";
  a.balanced_accuracy = 0.8;
  b.question_id = "q001";
  b.balanced_accuracy = 0.7;
  const std::vector<mfa::QuestionStats> stats = {a, b};
  mfa::save_ranking(mfa::rank(stats, bank, 0.6), dir / "ranking.json");

  std::mt19937_64 rng(3);
  const auto edd = synthetic::edd_scores(corpus, 1.0, rng);
  {
    std::ofstream out(dir / "edd.jsonl");
    wfs::write_edd_scores(edd, out);
  }
  std::vector<std::string> dataset_bytes, meta_bytes;
  for (int run = 0; run < 2; ++run) {
    pipeline::RunConfig cfg;
    cfg.ranking_path = dir / "ranking.json";
    cfg.train_manifest = dir / "train.jsonl";
    cfg.edd_scores = dir / "edd.jsonl";
    cfg.blend_scores_in_dataset = true;
    cfg.shuffle_seed = 77;
    cfg.output_dir = dir / ("run" + std::to_string(run));
    const auto out = pipeline::run_build_dataset(cfg);
    dataset_bytes.push_back(synthetic::slurp(out.dataset_file));
    meta_bytes.push_back(synthetic::slurp(sfs::meta_path_for(out.dataset_file)));
    const auto back = sfs::import_dataset(out.dataset_file);
    sfs::export_dataset(back, cfg.output_dir / "reexport.json");
    dataset_bytes.push_back(synthetic::slurp(cfg.output_dir / "reexport.json"));
    meta_bytes.push_back(synthetic::slurp(cfg.output_dir / "reexport.meta.json"));
  }
  const bool dataset_ok = std::all_of(dataset_bytes.begin(), dataset_bytes.end(),
                                      [&](const auto& s) { return s == dataset_bytes[0]; }) &&
                          std::all_of(meta_bytes.begin(), meta_bytes.end(),
                                      [&](const auto& s) { return s == meta_bytes[0]; });
  return {manifest_ok && dataset_ok,
          fmt::format("manifest {}, dataset export/import {} ({} bytes)", manifest_ok ? "stable" : "CHANGED",
                      dataset_ok ? "stable" : "CHANGED", dataset_bytes[0].size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"metric oracle suite", metric_oracles},
      {"ranking score equals (TPR+TNR)/2", ba_equivalence},
      {"ranking order and degenerate handling", ranking_oracle},
      {"synthetic feature assessment", synthetic_mfa},
      {"verdict/answer round-trip", answer_roundtrip},
      {"synthetic ablation", ablation},
      {"format stability", format_stability},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s  %-40s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - std::size_t(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
