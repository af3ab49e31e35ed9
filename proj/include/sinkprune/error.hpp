// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sinkprune {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNotPositiveDefinite,
  kInvalidConfig,
  kTokenOutOfRange,
  kSequenceTooLong,
  kWrongMode,
  kInvalidSteps,
  kNotRowStochastic,
  kShapeMismatch,
  kDegenerateSequence,
  kEmptyTimestepSet,
  kInvalidTimestep,
  kMixedSequenceLengths,
  kVocabTooSmall,
  kCorpusTooShort,
  kProfileLengthMismatch,
  kInvalidPattern,
  kMissingSinkProfile,
  kAllHeadsPruned,
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedFile,
  kManifestOverlap,
  kCorruptFile,
  kIoFailure,
  kNonFiniteValue,
  kConfigConflict,
  kMissingFile,
};

/// Stable identifier used in CLI error lines, e.g. "NotPositiveDefinite".
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sinkprune
