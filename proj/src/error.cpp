#include "editlab/error.hpp"

namespace editlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kSeqTooLong: return "SeqTooLong";
    case ErrorCode::kBadToken: return "BadToken";
    case ErrorCode::kBadLocation: return "BadLocation";
    case ErrorCode::kShapeError: return "ShapeError";
    case ErrorCode::kNumericalError: return "NumericalError";
    case ErrorCode::kOptimizationDiverged: return "OptimizationDiverged";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kMissingCounterfactual: return "MissingCounterfactual";
    case ErrorCode::kModelMismatch: return "ModelMismatch";
    case ErrorCode::kBadK: return "BadK";
    case ErrorCode::kBadIndicator: return "BadIndicator";
    case ErrorCode::kMissingParaphrases: return "MissingParaphrases";
    case ErrorCode::kMissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::kDegenerate: return "Degenerate";
    case ErrorCode::kLabelMismatch: return "LabelMismatch";
    case ErrorCode::kDatasetError: return "DatasetError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kCheckpointError: return "CheckpointError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace editlab
