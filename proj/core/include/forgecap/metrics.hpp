#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forgecap/manifest.hpp"

// Detection metrics over continuous fake scores (higher = more fake).
namespace forgecap::metrics {

struct ScoredPrediction {
  std::string image_id;
  std::optional<std::string> video_id;
  Label label = Label::Real;
  double score = 0.5;

  friend bool operator==(const ScoredPrediction&, const ScoredPrediction&) = default;
};

enum class Level { Frame, Video };
enum class VideoAggregation { Mean, Median };

std::string_view to_string(Level level) noexcept;
Level parse_level(std::string_view s);
VideoAggregation parse_aggregation(std::string_view s);

// Mann-Whitney AUC: fraction of (fake, real) pairs ordered correctly, ties
// counting one half. OneClassOnly unless both labels are present.
double auc(std::span<const ScoredPrediction> preds);

// Step-interpolated average precision with fake as the positive class.
// Ranking is by descending score, ties by ascending image_id. NoPositives
// without fakes, OneClassOnly without reals.
double average_precision(std::span<const ScoredPrediction> preds);

// Equal error rate. Thresholds sweep the observed scores (score >= t is
// called fake, plus a threshold above every score). Returns FPR at the first
// threshold where FPR <= FNR, linearly interpolated with the previous
// threshold when the rates do not meet exactly.
double eer(std::span<const ScoredPrediction> preds);

// Accuracy with score >= 0.5 classified fake.
double accuracy_at_half(std::span<const ScoredPrediction> preds);

// One prediction per video_id (sorted by id) with the mean (or median) frame
// score; image_id is set to the video id. Errors: MissingVideoId,
// MixedLabelsInVideo.
std::vector<ScoredPrediction> to_video_level(std::span<const ScoredPrediction> preds,
                                             VideoAggregation aggregation = VideoAggregation::Mean);

struct MetricReport {
  double auc = 0.0;
  double ap = 0.0;
  double eer = 0.0;
  double acc_at_half = 0.0;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  Level level = Level::Frame;
};

// Computes every metric at the requested level (aggregating frames first for Video).
MetricReport evaluate(std::span<const ScoredPrediction> preds, Level level,
                      VideoAggregation aggregation = VideoAggregation::Mean);

// Predictions JSONL: {"image_id", "video_id", "label", "score"}
void write_predictions(std::span<const ScoredPrediction> preds, std::ostream& out);
std::vector<ScoredPrediction> read_predictions(std::istream& in);
std::vector<ScoredPrediction> load_predictions(const std::filesystem::path& path);

}  // namespace forgecap::metrics
