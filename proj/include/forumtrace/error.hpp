#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forumtrace {

enum class ErrorCode {
  // use model
  UndeclaredActivity,
  EmptyObservables,
  AmbiguousRule,
  NoInitialActivity,
  DuplicateActivity,
  UnobservableTrigger,
  // structuring
  EmptyStream,
  NoInitialMatch,
  PathOutOfBounds,
  // sync
  SkewTooLarge,
  MalformedBatch,
  // repository
  InvariantViolation,
  DuplicateTraceId,
  UnknownTrace,
  InvalidWindow,
  ParseError,
  UnsupportedFormat,
  ValidationFailed,
  ActivityInUse,
  Unauthorized,
  // analysis
  WrongActivity,
  ReadingOutsideWindow,
  NonPositiveScale,
  // service
  UnknownSession,
  StructuringFailed,
  // scenario
  InvalidSpec,
  TargetUnreachable,
  // generic
  UnknownToken,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UndeclaredActivity: return "UndeclaredActivity";
    case ErrorCode::EmptyObservables: return "EmptyObservables";
    case ErrorCode::AmbiguousRule: return "AmbiguousRule";
    case ErrorCode::NoInitialActivity: return "NoInitialActivity";
    case ErrorCode::DuplicateActivity: return "DuplicateActivity";
    case ErrorCode::UnobservableTrigger: return "UnobservableTrigger";
    case ErrorCode::EmptyStream: return "EmptyStream";
    case ErrorCode::NoInitialMatch: return "NoInitialMatch";
    case ErrorCode::PathOutOfBounds: return "PathOutOfBounds";
    case ErrorCode::SkewTooLarge: return "SkewTooLarge";
    case ErrorCode::MalformedBatch: return "MalformedBatch";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::DuplicateTraceId: return "DuplicateTraceId";
    case ErrorCode::UnknownTrace: return "UnknownTrace";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::ActivityInUse: return "ActivityInUse";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::WrongActivity: return "WrongActivity";
    case ErrorCode::ReadingOutsideWindow: return "ReadingOutsideWindow";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::StructuringFailed: return "StructuringFailed";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::TargetUnreachable: return "TargetUnreachable";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. The code is stable and is what
/// callers (and the HTTP layer) branch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace forumtrace
