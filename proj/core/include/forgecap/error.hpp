#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forgecap {

enum class Errc {
  Parse,
  MissingField,
  DuplicateId,
  InvalidArgument,
  Io,
  Config,
  // question banks and assessment
  EmptyBank,
  InsufficientQuestions,
  DegenerateCorpus,
  DegenerateQuestion,
  AllDegenerate,
  // dataset construction
  EmptyStrongSet,
  MissingExplanation,
  MissingScore,
  // metrics
  OneClassOnly,
  NoPositives,
  MissingVideoId,
  MixedLabelsInVideo,
  // backends
  ScriptMiss,
  Timeout,
  Unreachable,
  BackendProtocol,
};

std::string_view errc_name(Errc code) noexcept;

// True for failures that originate in a model or detector service rather
// than in the caller's data or configuration.
bool is_backend_failure(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string detail);

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace forgecap
