#pragma once

#include <stdexcept>
#include <string>

namespace nabla {

enum class ErrorKind {
  singular_metric,
  nonpositive_weight,
  nonadmissible_weight,
  support_violation,
  shape_mismatch,
  chart_mismatch,
  exponent_mismatch,
  empty_covering,
  degenerate_embedding,
  config_error,
  resolution_error,
  io_error,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::singular_metric: return "SingularMetric";
    case ErrorKind::nonpositive_weight: return "NonpositiveWeight";
    case ErrorKind::nonadmissible_weight: return "NonadmissibleWeight";
    case ErrorKind::support_violation: return "SupportViolation";
    case ErrorKind::shape_mismatch: return "ShapeMismatch";
    case ErrorKind::chart_mismatch: return "ChartMismatch";
    case ErrorKind::exponent_mismatch: return "ExponentMismatch";
    case ErrorKind::empty_covering: return "EmptyCovering";
    case ErrorKind::degenerate_embedding: return "DegenerateEmbedding";
    case ErrorKind::config_error: return "ConfigError";
    case ErrorKind::resolution_error: return "ResolutionError";
    case ErrorKind::io_error: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace nabla
