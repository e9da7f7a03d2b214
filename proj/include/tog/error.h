#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tog {

enum class ErrorCode {
  kNonPositiveDepth,
  kInvalidArgument,
  kIoError,
  kBadMagic,
  kDimensionMismatch,
  kTruncatedFile,
  kOutOfBounds,
  kZeroVector,
  kEmptyInput,
  kDegenerateTrajectory,
  kAlreadyAugmented,
  kSchemaVersionMismatch,
  kEmptyStore,
  kReRankerFailure,
  kEmptyMask,
  kLowConfidenceMatch,
  kTooFewLifted,
  kInsufficientCorrespondences,
  kDegenerateConfiguration,
  kNoConsensus,
  kMissingDepthAtGraspPoint,
  kNoCandidates,
  kInvalidSpec,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures are reported through this exception; `code()` names
// the failure class so callers can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 protected:
  struct VerbatimMessage {};
  Error(ErrorCode code, const std::string& message, VerbatimMessage)
      : std::runtime_error(message), code_(code) {}

 private:
  ErrorCode code_;
};

}  // namespace tog
