#include "tog/error.h"

namespace tog {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kDegenerateTrajectory: return "DegenerateTrajectory";
    case ErrorCode::kAlreadyAugmented: return "AlreadyAugmented";
    case ErrorCode::kSchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::kEmptyStore: return "EmptyStore";
    case ErrorCode::kReRankerFailure: return "ReRankerFailure";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kLowConfidenceMatch: return "LowConfidenceMatch";
    case ErrorCode::kTooFewLifted: return "TooFewLifted";
    case ErrorCode::kInsufficientCorrespondences:
      return "InsufficientCorrespondences";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kNoConsensus: return "NoConsensus";
    case ErrorCode::kMissingDepthAtGraspPoint:
      return "MissingDepthAtGraspPoint";
    case ErrorCode::kNoCandidates: return "NoCandidates";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
  }
  return "Unknown";
}

}  // namespace tog
