#pragma once

#include <stdexcept>
#include <string>

namespace msv {

enum class ErrorKind {
  kInvalidArgument,
  kTooShort,
  kBadRange,
  kShapeMismatch,
  kDimMismatch,
  kConfigMismatch,
  kMissingStats,
  kLabelOutOfRange,
  kDegenerateEmbedding,
  kInsufficientData,
  kEmptyClass,
  kConstantScores,
  kUnsupportedFormat,
  kMalformedInput,
  kIoError,
};

inline const char *ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kTooShort: return "TooShort";
    case ErrorKind::kBadRange: return "BadRange";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kDimMismatch: return "DimMismatch";
    case ErrorKind::kConfigMismatch: return "ConfigMismatch";
    case ErrorKind::kMissingStats: return "MissingStats";
    case ErrorKind::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::kDegenerateEmbedding: return "DegenerateEmbedding";
    case ErrorKind::kInsufficientData: return "InsufficientData";
    case ErrorKind::kEmptyClass: return "EmptyClass";
    case ErrorKind::kConstantScores: return "ConstantScores";
    case ErrorKind::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::kMalformedInput: return "MalformedInput";
    case ErrorKind::kIoError: return "IoError";
  }
  return "Unknown";
}

/// All library failures are reported as msv::Error; kind() tells callers
/// which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string &what) {
  throw Error(kind, what);
}

}  // namespace msv
