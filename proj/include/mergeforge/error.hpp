#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mergeforge {

enum class ErrorKind {
  MalformedHeader,
  UnsupportedDtype,
  ShapeMismatch,
  IoFailure,
  NameSetMismatch,
  EmptyGroup,
  InvalidDensity,
  InvalidSpread,
  InvalidWeight,
  ZeroWeightSum,
  InvalidRecipe,
  LengthMismatch,
  TooFewElements,
  NoDefinedCorrelations,
  InvalidRatio,
  EmptyReference,
  InvalidPlan,
  ScorerFailure,
  EmptyInput,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::NameSetMismatch: return "NameSetMismatch";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::InvalidDensity: return "InvalidDensity";
    case ErrorKind::InvalidSpread: return "InvalidSpread";
    case ErrorKind::InvalidWeight: return "InvalidWeight";
    case ErrorKind::ZeroWeightSum: return "ZeroWeightSum";
    case ErrorKind::InvalidRecipe: return "InvalidRecipe";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::TooFewElements: return "TooFewElements";
    case ErrorKind::NoDefinedCorrelations: return "NoDefinedCorrelations";
    case ErrorKind::InvalidRatio: return "InvalidRatio";
    case ErrorKind::EmptyReference: return "EmptyReference";
    case ErrorKind::InvalidPlan: return "InvalidPlan";
    case ErrorKind::ScorerFailure: return "ScorerFailure";
    case ErrorKind::EmptyInput: return "EmptyInput";
  }
  return "Unknown";
}

/// Domain error raised by every mergeforge operation. The message is
/// prefixed with the kind name so it can be surfaced to users verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind), detail_(detail) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& detail) {
  throw Error(kind, detail);
}

}  // namespace mergeforge
