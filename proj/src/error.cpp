#include "kpm/error.hpp"

namespace kpm {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage: return "Usage";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::DegenerateDivision: return "DegenerateDivision";
    case ErrorCode::EmptyMeasurements: return "EmptyMeasurements";
    case ErrorCode::NonMonotonicTimestamps: return "NonMonotonicTimestamps";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::NonSquare: return "NonSquare";
    case ErrorCode::MissingDepth: return "MissingDepth";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InsufficientMatches: return "InsufficientMatches";
    case ErrorCode::EmptyErrors: return "EmptyErrors";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::UnknownTensorName: return "UnknownTensorName";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

int exit_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage:
    case ErrorCode::InvalidConfig:
    case ErrorCode::EmptyDataset:
      return 1;
    case ErrorCode::ParseError:
    case ErrorCode::DimMismatch:
    case ErrorCode::UnknownTensorName:
    case ErrorCode::VersionMismatch:
    case ErrorCode::IoError:
    case ErrorCode::EmptyMeasurements:
    case ErrorCode::NonMonotonicTimestamps:
    case ErrorCode::MissingDepth:
    case ErrorCode::ShapeMismatch:
      return 2;
    default:
      return 3;
  }
}

}  // namespace kpm
