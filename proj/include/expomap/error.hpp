#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace expomap {

enum class ErrorCode {
  OutOfBounds,
  ShapeMismatch,
  MalformedRow,
  MissingColumn,
  DegenerateRange,
  DegeneratePolygon,
  EmptyObservation,
  DomainTooSmall,
  OutOfMemory,
  NotPositiveDefinite,
  EigFailure,
  Divergence,
  IndexMismatch,
  BadWidths,
  EmptyMask,
  NonFiniteLoss,
  TooManySensors,
  EmptyInput,
  UnitMismatch,
  HoldoutMissing,
  InvalidArgument,
  ConfigError,
  IoError,
  FormatError,
};

std::string_view to_string(ErrorCode code);

// Every failure the library raises carries a machine-readable class so the
// CLI can print "<ErrorClass>: <message>" on a single line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace expomap
