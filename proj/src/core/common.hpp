// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace idsan {

// Failure taxonomy shared by the whole library. The CLI partitions these
// into usage / data / numerical exit codes via classify().
enum class Err : int {
  Ok = 0,
  Io,
  Format,
  Metadata,
  SplitViolation,
  DegenerateVector,
  InsufficientImages,
  RankDeficient,
  DegenerateFit,
  Dim,
  InvalidBasis,
  UnsupportedVersion,
  EmptyImpostors,
  SingularSystem,
  TrainingDiverged,
  EmptyInput,
  InvalidGrid,
  DegenerateBox,
  Unreachable,
  InvalidK,
  DegenerateTask,
  MissingTruth,
  UndefinedRetention,
  InvalidArgument,
  Internal,
};

enum class ErrClass : int { Usage = 1, Data = 2, Numerical = 3 };

const char* err_name(Err e);
ErrClass classify(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg, std::int64_t info = 0)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg),
        code_(code),
        info_(info) {}

  Err code() const noexcept { return code_; }
  // Extra numeric payload, e.g. the achievable rank for RankDeficient or
  // the offending row index for DegenerateVector.
  std::int64_t info() const noexcept { return info_; }

 private:
  Err code_;
  std::int64_t info_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg,
                              std::int64_t info = 0) {
  throw Error(code, msg, info);
}

}  // namespace idsan
