// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/error.hpp"

namespace sinkprune {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kTokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kWrongMode: return "WrongMode";
    case ErrorCode::kInvalidSteps: return "InvalidSteps";
    case ErrorCode::kNotRowStochastic: return "NotRowStochastic";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDegenerateSequence: return "DegenerateSequence";
    case ErrorCode::kEmptyTimestepSet: return "EmptyTimestepSet";
    case ErrorCode::kInvalidTimestep: return "InvalidTimestep";
    case ErrorCode::kMixedSequenceLengths: return "MixedSequenceLengths";
    case ErrorCode::kVocabTooSmall: return "VocabTooSmall";
    case ErrorCode::kCorpusTooShort: return "CorpusTooShort";
    case ErrorCode::kProfileLengthMismatch: return "ProfileLengthMismatch";
    case ErrorCode::kInvalidPattern: return "InvalidPattern";
    case ErrorCode::kMissingSinkProfile: return "MissingSinkProfile";
    case ErrorCode::kAllHeadsPruned: return "AllHeadsPruned";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kManifestOverlap: return "ManifestOverlap";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kConfigConflict: return "ConfigConflict";
    case ErrorCode::kMissingFile: return "MissingFile";
  }
  return "Unknown";
}

}  // namespace sinkprune
