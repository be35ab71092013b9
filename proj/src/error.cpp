#include "expomap/error.hpp"

namespace expomap {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::DegenerateRange: return "DegenerateRange";
    case ErrorCode::DegeneratePolygon: return "DegeneratePolygon";
    case ErrorCode::EmptyObservation: return "EmptyObservation";
    case ErrorCode::DomainTooSmall: return "DomainTooSmall";
    case ErrorCode::OutOfMemory: return "OutOfMemory";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::EigFailure: return "EigFailure";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::IndexMismatch: return "IndexMismatch";
    case ErrorCode::BadWidths: return "BadWidths";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::TooManySensors: return "TooManySensors";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnitMismatch: return "UnitMismatch";
    case ErrorCode::HoldoutMissing: return "HoldoutMissing";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace expomap
