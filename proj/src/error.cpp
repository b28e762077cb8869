#include "visunpack/error.hpp"

namespace visunpack {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NotPe: return "NotPe";
    case ErrorCode::TruncatedHeader: return "TruncatedHeader";
    case ErrorCode::SectionOutOfBounds: return "SectionOutOfBounds";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::WeakPattern: return "WeakPattern";
    case ErrorCode::CommandFailed: return "CommandFailed";
    case ErrorCode::UnpackFailed: return "UnpackFailed";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::OrderingError: return "OrderingError";
    case ErrorCode::EmptyProgram: return "EmptyProgram";
    case ErrorCode::FileTooSmall: return "FileTooSmall";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::RegionTooSmall: return "RegionTooSmall";
    case ErrorCode::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::MapSmallerThanGrid: return "MapSmallerThanGrid";
    case ErrorCode::EmptyString: return "EmptyString";
    case ErrorCode::NoUsableTokens: return "NoUsableTokens";
    case ErrorCode::DuplicateSample: return "DuplicateSample";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

namespace {

std::string format_message(ErrorCode code, const std::string& message,
                           const std::string& stage) {
  std::string out;
  if (!stage.empty()) out += "[" + stage + "] ";
  out += to_string(code);
  if (!message.empty()) out += ": " + message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message)
    : Error(code, message, std::string{}) {}

Error::Error(ErrorCode code, const std::string& message, std::string stage)
    : std::runtime_error(format_message(code, message, stage)),
      code_(code),
      stage_(std::move(stage)),
      detail_(message) {}

Error Error::with_stage(std::string stage) const {
  if (!stage_.empty()) return *this;
  return Error(code_, detail_, std::move(stage));
}

}  // namespace visunpack
