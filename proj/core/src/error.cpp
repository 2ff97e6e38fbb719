#include "forgecap/error.hpp"

namespace forgecap {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::Parse: return "ParseError";
    case Errc::MissingField: return "MissingField";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "IoError";
    case Errc::Config: return "ConfigError";
    case Errc::EmptyBank: return "EmptyBank";
    case Errc::InsufficientQuestions: return "InsufficientQuestions";
    case Errc::DegenerateCorpus: return "DegenerateCorpus";
    case Errc::DegenerateQuestion: return "DegenerateQuestion";
    case Errc::AllDegenerate: return "AllDegenerate";
    case Errc::EmptyStrongSet: return "EmptyStrongSet";
    case Errc::MissingExplanation: return "MissingExplanation";
    case Errc::MissingScore: return "MissingScore";
    case Errc::OneClassOnly: return "OneClassOnly";
    case Errc::NoPositives: return "NoPositives";
    case Errc::MissingVideoId: return "MissingVideoId";
    case Errc::MixedLabelsInVideo: return "MixedLabelsInVideo";
    case Errc::ScriptMiss: return "ScriptMiss";
    case Errc::Timeout: return "Timeout";
    case Errc::Unreachable: return "Unreachable";
    case Errc::BackendProtocol: return "BackendProtocol";
  }
  return "Unknown";
}

bool is_backend_failure(Errc code) noexcept {
  switch (code) {
    case Errc::ScriptMiss:
    case Errc::Timeout:
    case Errc::Unreachable:
    case Errc::BackendProtocol:
      return true;
    default:
      return false;
  }
}

Error::Error(Errc code, std::string detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
      code_(code),
      detail_(std::move(detail)) {}

}  // namespace forgecap
