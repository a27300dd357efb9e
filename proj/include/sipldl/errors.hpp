#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sipldl {

enum class ErrorKind {
  Dimension,
  DegenerateInput,
  Parameter,
  InvalidGraph,
  BatchTooSmall,
  Normalization,
  DegenerateClass,
  BoundUndefined,
  InfeasibleSplit,
  Parse,
  Range,
  Divergence,
  Io,
  Schema,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::InvalidGraph: return "invalid-graph";
    case ErrorKind::BatchTooSmall: return "batch-too-small";
    case ErrorKind::Normalization: return "normalization";
    case ErrorKind::DegenerateClass: return "degenerate-class";
    case ErrorKind::BoundUndefined: return "bound-undefined";
    case ErrorKind::InfeasibleSplit: return "infeasible-split";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Range: return "range";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Io: return "io";
    case ErrorKind::Schema: return "schema";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace sipldl
