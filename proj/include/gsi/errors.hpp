#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gsi {

enum class ErrorCode {
  // geometry
  InvalidRotation,
  InvalidIntrinsics,
  InvalidObb,
  BehindCamera,
  InvalidMargin,
  // scene
  ParseError,
  ValidationError,
  NoSupport,
  UnknownObject,
  // spatial ops
  UnknownTarget,
  UnknownReference,
  NonManipulable,
  SameObject,
  AngleOutOfRange,
  NotAReceptacle,
  DoesNotFit,
  MagnitudeOutOfRange,
  AmbiguousCriterion,
  FactorOutOfRange,
  DanglingReference,
  PostTransformCollision,
  // sampler
  KTooLarge,
  NoFreeSpace,
  // renderer / images
  DegenerateCamera,
  DimensionMismatch,
  ImageIo,
  // pipeline
  BudgetExhausted,
  // real adapter
  ImageTooSmall,
  NoFeasibleOperation,
  NothingVisible,
  UnsupportedKind,
  InvalidTransition,
  // eval
  PaletteAmbiguous,
  EstimationUnavailable,
  ProviderUnavailable,
  EmptyInput,
  // judge
  JudgeUnavailable,
  SchemaViolation,
  // cli / config
  ConfigError,
  PortInUse,
  ManifestLocked,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable code. `field()` names the offending
/// input field for validation failures and is empty otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

}  // namespace gsi
