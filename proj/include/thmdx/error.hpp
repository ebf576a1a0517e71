#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace thmdx {

enum class ErrorCode {
  PassLimitExceeded,
  UnbalancedDelimiters,
  NoStatementSection,
  MissingContext,
  ProviderError,
  NonAsciiOutput,
  DimensionMismatch,
  ZeroVector,
  InvalidK,
  DuplicateId,
  IoError,
  ChecksumMismatch,
  VersionMismatch,
  EmptyQuerySet,
  MissingQuery,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::PassLimitExceeded: return "PassLimitExceeded";
    case ErrorCode::UnbalancedDelimiters: return "UnbalancedDelimiters";
    case ErrorCode::NoStatementSection: return "NoStatementSection";
    case ErrorCode::MissingContext: return "MissingContext";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::NonAsciiOutput: return "NonAsciiOutput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::EmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::MissingQuery: return "MissingQuery";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Exception carrying one of the library's error kinds.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace thmdx
