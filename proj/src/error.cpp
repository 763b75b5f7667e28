#include "presencia/error.hpp"

namespace presencia {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MALFORMED_HEADER";
    case ErrorCode::TruncatedPayload: return "TRUNCATED_PAYLOAD";
    case ErrorCode::OutOfBounds: return "OUT_OF_BOUNDS";
    case ErrorCode::ImageTooSmall: return "IMAGE_TOO_SMALL";
    case ErrorCode::DegenerateLabels: return "DEGENERATE_LABELS";
    case ErrorCode::EmptyFeatureBank: return "EMPTY_FEATURE_BANK";
    case ErrorCode::ParseError: return "PARSE_ERROR";
    case ErrorCode::InvariantViolation: return "INVARIANT_VIOLATION";
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::NonFiniteValue: return "NON_FINITE_VALUE";
    case ErrorCode::BadMagic: return "BAD_MAGIC";
    case ErrorCode::ShapeTableMismatch: return "SHAPE_TABLE_MISMATCH";
    case ErrorCode::DuplicateId: return "DUPLICATE_ID";
    case ErrorCode::InvalidId: return "INVALID_ID";
    case ErrorCode::PersonNotFound: return "PERSON_NOT_FOUND";
    case ErrorCode::NoFace: return "NO_FACE";
    case ErrorCode::MultipleFaces: return "MULTIPLE_FACES";
    case ErrorCode::AlreadyReady: return "ALREADY_READY";
    case ErrorCode::InsufficientSamples: return "INSUFFICIENT_SAMPLES";
    case ErrorCode::NotEnoughPersons: return "NOT_ENOUGH_PERSONS";
    case ErrorCode::ModelsNotReady: return "MODELS_NOT_READY";
    case ErrorCode::SessionNotRunning: return "SESSION_NOT_RUNNING";
    case ErrorCode::SessionNotFound: return "SESSION_NOT_FOUND";
    case ErrorCode::NonMonotoneTimestamp: return "NON_MONOTONE_TIMESTAMP";
    case ErrorCode::NotFound: return "NOT_FOUND";
    case ErrorCode::TypeMismatch: return "TYPE_MISMATCH";
    case ErrorCode::SchemaViolation: return "SCHEMA_VIOLATION";
    case ErrorCode::CorruptInterior: return "CORRUPT_INTERIOR";
    case ErrorCode::IoError: return "IO_ERROR";
    case ErrorCode::BadRequest: return "BAD_REQUEST";
    case ErrorCode::TrainingInProgress: return "TRAINING_IN_PROGRESS";
  }
  return "INTERNAL";
}

}  // namespace presencia
