#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace visunpack {

enum class ErrorCode {
  // packerid
  NotPe,
  TruncatedHeader,
  SectionOutOfBounds,
  ParseError,
  WeakPattern,
  CommandFailed,
  UnpackFailed,
  // ingest
  SchemaError,
  OrderingError,
  EmptyProgram,
  FileTooSmall,
  // semanticforge
  LengthMismatch,
  RegionTooSmall,
  EmptyEnsemble,
  // clahe
  ValueOutOfRange,
  MapSmallerThanGrid,
  // labelrefiner
  EmptyString,
  NoUsableTokens,
  // pipeline
  DuplicateSample,
  EmptyTrainingSet,
  ShapeMismatch,
  // shared
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception type used across the library. `stage()` is set when an error
/// escapes a pipeline composition (e.g. "forge" or "enhance").
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  Error(ErrorCode code, const std::string& message, std::string stage);

  ErrorCode code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

  /// Copy of this error tagged with `stage`; an existing tag is kept.
  Error with_stage(std::string stage) const;

 private:
  ErrorCode code_;
  std::string stage_;
  std::string detail_;
};

}  // namespace visunpack
