/* Copyright 2026 The bucketload Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bucketload {

// Every failure raised by the library carries one of these codes. The CLI
// maps them onto exit-status classes (see error_class()).
enum class ErrorCode {
  kInvalidArgument,
  kNonDivisibleFrames,
  kNonDivisibleSpatial,
  kDuplicateShape,
  kEmptyCatalog,
  kOverflow,
  kInsufficientData,
  kDegenerateFit,
  kZeroVariance,
  kTargetBelowOverhead,
  kZeroSlope,
  kEmptyRecords,
  kPlanMismatch,
  kAllZero,
  kZeroMean,
  kNonFinite,
  kShapeMismatch,
  kStaleStats,
  kInvalidTile,
  kFileNotFound,
  kIoError,
  kParseError,
};

enum class ErrorClass { kValidation, kIo };

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNonDivisibleFrames: return "NonDivisibleFrames";
    case ErrorCode::kNonDivisibleSpatial: return "NonDivisibleSpatial";
    case ErrorCode::kDuplicateShape: return "DuplicateShape";
    case ErrorCode::kEmptyCatalog: return "EmptyCatalog";
    case ErrorCode::kOverflow: return "Overflow";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kDegenerateFit: return "DegenerateFit";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kTargetBelowOverhead: return "TargetBelowOverhead";
    case ErrorCode::kZeroSlope: return "ZeroSlope";
    case ErrorCode::kEmptyRecords: return "EmptyRecords";
    case ErrorCode::kPlanMismatch: return "PlanMismatch";
    case ErrorCode::kAllZero: return "AllZero";
    case ErrorCode::kZeroMean: return "ZeroMean";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kStaleStats: return "StaleStats";
    case ErrorCode::kInvalidTile: return "InvalidTile";
    case ErrorCode::kFileNotFound: return "FileNotFound";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

inline ErrorClass error_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::kFileNotFound:
    case ErrorCode::kIoError:
      return ErrorClass::kIo;
    default:
      return ErrorClass::kValidation;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace bucketload
