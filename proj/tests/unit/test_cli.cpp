#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <random>
#include <string>

#include "forgecap/pipeline.hpp"
#include "support/synthetic.hpp"

using namespace forgecap;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FORGECAP_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("exit codes and a full scripted run") {
    const auto dir = synthetic::fresh_dir("cli");
    const auto log = dir / "log.txt";
    const auto corpus = synthetic::corpus(30, 30, "assess");
    save_manifest(corpus, dir / "assess.jsonl");
    mfa::QuestionBank bank;
    bank.questions.push_back({"q000", "face layout", "Is the face layout unnatural?", true});
    bank.questions.push_back({"q001", "lighting", "Is the lighting inconsistent?", true});
    mfa::save_question_bank(bank, dir / "questions.json");
    std::mt19937_64 rng(2);
    ScriptedBackend model("cli");
    synthetic::script_question(model, bank.questions[0], corpus, 0.9, rng);
    synthetic::script_question(model, bank.questions[1], corpus, 0.5, rng);
    synthetic::script_verdicts(model, corpus, 0.8, rng);
    model.save(dir / "model.jsonl");

    const std::string common = "--scripted-fixture " + (dir / "model.jsonl").string() + " --out " + (dir / "run").string();
    CHECK(run_cli("--help", log) == 0);
    CHECK(run_cli("--bogus-flag", log) == 2);
    CHECK(run_cli(common + " assess --manifest " + (dir / "missing.jsonl").string() + " --questions " +
                      (dir / "questions.json").string(),
                  log) == 2);

    ScriptedBackend confused("confused");
    for (const auto& q : bank.questions)
      for (const auto& r : corpus.records) confused.add(r.image_id, q.text, "unsure");
    confused.save(dir / "confused.jsonl");
    CHECK(run_cli("--scripted-fixture " + (dir / "confused.jsonl").string() + " --out " + (dir / "bad").string() +
                      " assess --manifest " + (dir / "assess.jsonl").string() + " --questions " +
                      (dir / "questions.json").string(),
                  log) == 3);
    CHECK(synthetic::slurp(log).find("AllDegenerate") != std::string::npos);

    CHECK(run_cli(common + " assess --manifest " + (dir / "assess.jsonl").string() + " --questions " +
                      (dir / "questions.json").string(),
                  log) == 0);
    CHECK(fs::exists(dir / "run" / "ranking.json"));
    CHECK(run_cli(common + " build-dataset --manifest " + (dir / "assess.jsonl").string(), log) == 0);
    CHECK(fs::exists(dir / "run" / "dataset.json"));
    CHECK(run_cli(common + " infer --manifest " + (dir / "assess.jsonl").string(), log) == 0);
    CHECK(run_cli(common + " evaluate", log) == 0);
    CHECK(fs::exists(dir / "run" / "report.json"));
    CHECK(run_cli(common + " report", log) == 0);
    CHECK(synthetic::slurp(log).find("feature ranking") != std::string::npos);

    // the scripted model knows only the plain prompt; a missing entry is a backend failure
    CHECK(run_cli(common + " --edd-scores " + (dir / "edd.jsonl").string() + " infer --manifest " +
                      (dir / "assess.jsonl").string(),
                  log) == 2);
    {
      std::ofstream out(dir / "edd.jsonl");
      wfs::write_edd_scores(synthetic::edd_scores(corpus, 1.0, rng), out);
    }
    CHECK(run_cli(common + " --edd-scores " + (dir / "edd.jsonl").string() + " infer --manifest " +
                      (dir / "assess.jsonl").string(),
                  log) == 4);
  }
}
