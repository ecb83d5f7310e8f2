#include "rhythm/error.hpp"

namespace rhythm {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::OutOfGrid: return "OutOfGrid";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::DuplicateObservation: return "DuplicateObservation";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::InvalidNoise: return "InvalidNoise";
    case ErrorCode::IndivisibleLength: return "IndivisibleLength";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::CacheMiss: return "CacheMiss";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::AllTargetsMissing: return "AllTargetsMissing";
    case ErrorCode::NoObservedTargets: return "NoObservedTargets";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "UnknownError";
}

}  // namespace rhythm
