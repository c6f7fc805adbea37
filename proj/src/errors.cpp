#include "gsi/errors.hpp"

namespace gsi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidRotation: return "InvalidRotation";
    case ErrorCode::InvalidIntrinsics: return "InvalidIntrinsics";
    case ErrorCode::InvalidObb: return "InvalidObb";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::InvalidMargin: return "InvalidMargin";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::NoSupport: return "NoSupport";
    case ErrorCode::UnknownObject: return "UnknownObject";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::UnknownReference: return "UnknownReference";
    case ErrorCode::NonManipulable: return "NonManipulable";
    case ErrorCode::SameObject: return "SameObject";
    case ErrorCode::AngleOutOfRange: return "AngleOutOfRange";
    case ErrorCode::NotAReceptacle: return "NotAReceptacle";
    case ErrorCode::DoesNotFit: return "DoesNotFit";
    case ErrorCode::MagnitudeOutOfRange: return "MagnitudeOutOfRange";
    case ErrorCode::AmbiguousCriterion: return "AmbiguousCriterion";
    case ErrorCode::FactorOutOfRange: return "FactorOutOfRange";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::PostTransformCollision: return "PostTransformCollision";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::NoFreeSpace: return "NoFreeSpace";
    case ErrorCode::DegenerateCamera: return "DegenerateCamera";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ImageIo: return "ImageIo";
    case ErrorCode::BudgetExhausted: return "BudgetExhausted";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::NoFeasibleOperation: return "NoFeasibleOperation";
    case ErrorCode::NothingVisible: return "NothingVisible";
    case ErrorCode::UnsupportedKind: return "UnsupportedKind";
    case ErrorCode::InvalidTransition: return "InvalidTransition";
    case ErrorCode::PaletteAmbiguous: return "PaletteAmbiguous";
    case ErrorCode::EstimationUnavailable: return "EstimationUnavailable";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::JudgeUnavailable: return "JudgeUnavailable";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::PortInUse: return "PortInUse";
    case ErrorCode::ManifestLocked: return "ManifestLocked";
  }
  return "Unknown";
}

}  // namespace gsi
