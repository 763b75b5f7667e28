#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace presencia {

// Every failure the engine can report. The service maps each code to an
// HTTP status and a stable machine string (see error_code_name).
enum class ErrorCode {
  MalformedHeader,
  TruncatedPayload,
  OutOfBounds,
  ImageTooSmall,
  DegenerateLabels,
  EmptyFeatureBank,
  ParseError,
  InvariantViolation,
  ShapeMismatch,
  NonFiniteValue,
  BadMagic,
  ShapeTableMismatch,
  DuplicateId,
  InvalidId,
  PersonNotFound,
  NoFace,
  MultipleFaces,
  AlreadyReady,
  InsufficientSamples,
  NotEnoughPersons,
  ModelsNotReady,
  SessionNotRunning,
  SessionNotFound,
  NonMonotoneTimestamp,
  NotFound,
  TypeMismatch,
  SchemaViolation,
  CorruptInterior,
  IoError,
  BadRequest,
  TrainingInProgress,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace presencia
