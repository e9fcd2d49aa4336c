// SPDX-License-Identifier: Apache-2.0
#include "core/common.hpp"

namespace idsan {

const char* err_name(Err e) {
  switch (e) {
    case Err::Ok: return "Ok";
    case Err::Io: return "IoError";
    case Err::Format: return "FormatError";
    case Err::Metadata: return "MetadataError";
    case Err::SplitViolation: return "SplitViolation";
    case Err::DegenerateVector: return "DegenerateVector";
    case Err::InsufficientImages: return "InsufficientImages";
    case Err::RankDeficient: return "RankDeficient";
    case Err::DegenerateFit: return "DegenerateFit";
    case Err::Dim: return "DimError";
    case Err::InvalidBasis: return "InvalidBasis";
    case Err::UnsupportedVersion: return "UnsupportedVersion";
    case Err::EmptyImpostors: return "EmptyImpostors";
    case Err::SingularSystem: return "SingularSystem";
    case Err::TrainingDiverged: return "TrainingDiverged";
    case Err::EmptyInput: return "EmptyInput";
    case Err::InvalidGrid: return "InvalidGrid";
    case Err::DegenerateBox: return "DegenerateBox";
    case Err::Unreachable: return "Unreachable";
    case Err::InvalidK: return "InvalidK";
    case Err::DegenerateTask: return "DegenerateTask";
    case Err::MissingTruth: return "MissingTruth";
    case Err::UndefinedRetention: return "UndefinedRetention";
    case Err::InvalidArgument: return "InvalidArgument";
    case Err::Internal: return "InternalError";
  }
  return "UnknownError";
}

ErrClass classify(Err e) {
  switch (e) {
    case Err::Io:
    case Err::Format:
    case Err::Metadata:
    case Err::SplitViolation:
    case Err::Dim:
    case Err::UnsupportedVersion:
    case Err::MissingTruth:
    case Err::EmptyInput:
      return ErrClass::Data;
    case Err::InvalidArgument:
    case Err::InvalidGrid:
    case Err::InvalidK:
      return ErrClass::Usage;
    default:
      return ErrClass::Numerical;
  }
}

}  // namespace idsan
