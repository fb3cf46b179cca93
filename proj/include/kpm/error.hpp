#pragma once

#include <stdexcept>
#include <string>

namespace kpm {

enum class ErrorCode {
  Usage,
  NonPositiveDepth,
  DegenerateDivision,
  EmptyMeasurements,
  NonMonotonicTimestamps,
  ShapeMismatch,
  NonPositiveSigma,
  NonPositiveTemperature,
  NonSquare,
  MissingDepth,
  NonFiniteLoss,
  EmptyDataset,
  InsufficientMatches,
  EmptyErrors,
  InvalidConfig,
  ParseError,
  DimMismatch,
  UnknownTensorName,
  VersionMismatch,
  IoError,
};

const char* to_string(ErrorCode code);

// Process exit class for a code: 1 usage, 2 parse, 3 numeric.
int exit_class(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace kpm
