#pragma once

#include <stdexcept>
#include <string>

namespace rhythm {

enum class ErrorCode {
  ShapeMismatch,
  IndexOutOfRange,
  NonFiniteValue,
  NonFiniteGradient,
  NonFiniteLoss,
  OutOfGrid,
  MalformedRow,
  DuplicateObservation,
  EmptySplit,
  InvalidNoise,
  IndivisibleLength,
  EmptySegment,
  CacheMiss,
  IoError,
  DimMismatch,
  ChecksumMismatch,
  AllTargetsMissing,
  NoObservedTargets,
  EmptySequence,
  ConfigError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace rhythm
