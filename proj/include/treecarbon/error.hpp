#pragma once

#include <stdexcept>
#include <string>

namespace treecarbon {

enum class ErrorKind {
  Parameter,
  Invariant,
  Io,
  Parse,
  UnsupportedFormat,
  MalformedGeoreference,
  QuantizationOverflow,
  EmptySelection,
  NoGroundSurface,
  InsufficientCoverage,
  EmptySegmentation,
  IncompleteCoverage,
  Validation,
  Overlap,
  SingularFit,
  InsufficientData,
  Calibration,
  Ambiguity,
  Deserialization,
  Placement,
  Configuration,
  Stage,
};

const char* to_string(ErrorKind kind) noexcept;

// Every failure surfaced by the library is an Error carrying a kind so that
// callers (and tests) can dispatch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace treecarbon
