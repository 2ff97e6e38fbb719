#include "forgecap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "forgecap/error.hpp"
#include "json_util.hpp"

namespace forgecap::metrics {

using nlohmann::ordered_json;

namespace {

struct ClassCounts {
  std::size_t real = 0;
  std::size_t fake = 0;
};

ClassCounts validate(std::span<const ScoredPrediction> preds) {
  ClassCounts c;
  for (const auto& p : preds) {
    if (!(p.score >= 0.0 && p.score <= 1.0))
      throw Error(Errc::InvalidArgument, "score for " + p.image_id + " outside [0,1]");
    ++(p.label == Label::Real ? c.real : c.fake);
  }
  return c;
}

ClassCounts require_both(std::span<const ScoredPrediction> preds) {
  const auto c = validate(preds);
  if (c.real == 0 || c.fake == 0)
    throw Error(Errc::OneClassOnly, std::to_string(c.real) + " real / " + std::to_string(c.fake) + " fake");
  return c;
}

}  // namespace

std::string_view to_string(Level level) noexcept { return level == Level::Frame ? "frame" : "video"; }

Level parse_level(std::string_view s) {
  if (s == "frame") return Level::Frame;
  if (s == "video") return Level::Video;
  throw Error(Errc::Config, "level must be frame or video, got " + std::string(s));
}

VideoAggregation parse_aggregation(std::string_view s) {
  if (s == "mean") return VideoAggregation::Mean;
  if (s == "median") return VideoAggregation::Median;
  throw Error(Errc::Config, "aggregation must be mean or median, got " + std::string(s));
}

double auc(std::span<const ScoredPrediction> preds) {
  const auto counts = require_both(preds);
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return preds[a].score < preds[b].score; });

  // Sum of mid-ranks (1-based) of the fake predictions.
  double fake_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && preds[order[j]].score == preds[order[i]].score) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (preds[order[k]].label == Label::Fake) fake_rank_sum += mid_rank;
    i = j;
  }
  const double nf = static_cast<double>(counts.fake);
  const double nr = static_cast<double>(counts.real);
  const double u = fake_rank_sum - nf * (nf + 1.0) / 2.0;
  return u / (nf * nr);
}

double average_precision(std::span<const ScoredPrediction> preds) {
  const auto counts = validate(preds);
  if (counts.fake == 0) throw Error(Errc::NoPositives, "average precision needs at least one fake");
  if (counts.real == 0) throw Error(Errc::OneClassOnly, "average precision needs at least one real");

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
    return preds[a].image_id < preds[b].image_id;
  });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (preds[order[k]].label != Label::Fake) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(counts.fake);
}

double eer(std::span<const ScoredPrediction> preds) {
  const auto counts = require_both(preds);
  std::vector<double> reals, fakes;
  for (const auto& p : preds) (p.label == Label::Real ? reals : fakes).push_back(p.score);
  std::sort(reals.begin(), reals.end());
  std::sort(fakes.begin(), fakes.end());
  std::vector<double> thresholds;
  thresholds.reserve(preds.size());
  for (const auto& p : preds) thresholds.push_back(p.score);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double nr = static_cast<double>(counts.real);
  const double nf = static_cast<double>(counts.fake);
  // Rates at threshold index i; i == thresholds.size() is the threshold above every score.
  auto rates = [&](std::size_t i) {
    std::size_t false_pos = 0, false_neg = 0;
    if (i < thresholds.size()) {
      const double t = thresholds[i];
      false_pos = static_cast<std::size_t>(reals.end() - std::lower_bound(reals.begin(), reals.end(), t));
      false_neg = static_cast<std::size_t>(std::lower_bound(fakes.begin(), fakes.end(), t) - fakes.begin());
    } else {
      false_neg = fakes.size();
    }
    return std::pair{false_pos, false_neg};
  };

  double prev_fpr = 1.0, prev_diff = 1.0;
  for (std::size_t i = 0; i <= thresholds.size(); ++i) {
    const auto [false_pos, false_neg] = rates(i);
    const double fpr = static_cast<double>(false_pos) / nr;
    const double fnr = static_cast<double>(false_neg) / nf;
    // Sign of FPR - FNR from exact integer cross products.
    const auto lhs = static_cast<long double>(false_pos) * counts.fake;
    const auto rhs = static_cast<long double>(false_neg) * counts.real;
    if (lhs == rhs) return fpr;
    if (lhs < rhs) {
      const double diff = fpr - fnr;
      const double alpha = prev_diff / (prev_diff - diff);
      return prev_fpr + alpha * (fpr - prev_fpr);
    }
    prev_fpr = fpr;
    prev_diff = fpr - fnr;
  }
  return 0.0;  // unreachable: the top threshold always has FPR = 0 < FNR = 1
}

double accuracy_at_half(std::span<const ScoredPrediction> preds) {
  validate(preds);
  if (preds.empty()) throw Error(Errc::OneClassOnly, "no predictions");
  std::size_t correct = 0;
  for (const auto& p : preds) correct += ((p.score >= 0.5) == (p.label == Label::Fake)) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

std::vector<ScoredPrediction> to_video_level(std::span<const ScoredPrediction> preds, VideoAggregation aggregation) {
  struct Group {
    Label label;
    std::vector<double> scores;
  };
  std::map<std::string, Group> groups;
  for (const auto& p : preds) {
    if (!p.video_id) throw Error(Errc::MissingVideoId, p.image_id);
    auto [it, inserted] = groups.try_emplace(*p.video_id, Group{p.label, {}});
    if (!inserted && it->second.label != p.label) throw Error(Errc::MixedLabelsInVideo, *p.video_id);
    it->second.scores.push_back(p.score);
  }
  std::vector<ScoredPrediction> out;
  out.reserve(groups.size());
  for (auto& [video, g] : groups) {
    double score = 0.0;
    if (aggregation == VideoAggregation::Mean) {
      score = std::accumulate(g.scores.begin(), g.scores.end(), 0.0) / static_cast<double>(g.scores.size());
    } else {
      std::sort(g.scores.begin(), g.scores.end());
      const std::size_t n = g.scores.size();
      score = n % 2 == 1 ? g.scores[n / 2] : (g.scores[n / 2 - 1] + g.scores[n / 2]) / 2.0;
    }
    out.push_back({video, video, g.label, std::clamp(score, 0.0, 1.0)});
  }
  return out;
}

MetricReport evaluate(std::span<const ScoredPrediction> preds, Level level, VideoAggregation aggregation) {
  std::vector<ScoredPrediction> videos;
  std::span<const ScoredPrediction> use = preds;
  if (level == Level::Video) {
    videos = to_video_level(preds, aggregation);
    use = videos;
  }
  const auto counts = require_both(use);
  MetricReport r;
  r.level = level;
  r.n_real = counts.real;
  r.n_fake = counts.fake;
  r.auc = auc(use);
  r.ap = average_precision(use);
  r.eer = eer(use);
  r.acc_at_half = accuracy_at_half(use);
  return r;
}

void write_predictions(std::span<const ScoredPrediction> preds, std::ostream& out) {
  for (const auto& p : preds) {
    ordered_json j;
    j["image_id"] = p.image_id;
    j["video_id"] = p.video_id ? ordered_json(*p.video_id) : ordered_json(nullptr);
    j["label"] = to_string(p.label);
    j["score"] = p.score;
    out << j.dump() << '\n';
  }
}

std::vector<ScoredPrediction> read_predictions(std::istream& in) {
  std::vector<ScoredPrediction> out;
  json_util::for_each_jsonl(in, [&](const ordered_json& j, std::size_t line_no) {
    ScoredPrediction p;
    p.image_id = json_util::required_string(j, "image_id");
    if (auto it = j.find("video_id"); it != j.end() && !it->is_null()) p.video_id = it->get<std::string>();
    p.label = parse_label(json_util::required_string(j, "label"));
    p.score = json_util::required_number(j, "score");
    if (!(p.score >= 0.0 && p.score <= 1.0))
      throw Error(Errc::Parse, "line " + std::to_string(line_no) + ": score outside [0,1]");
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<ScoredPrediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open predictions " + path.string());
  return read_predictions(in);
}

}  // namespace forgecap::metrics
