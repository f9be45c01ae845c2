#pragma once

#include <stdexcept>
#include <string>

namespace pathdiff {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag; the CLI maps it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Invalid configuration value or combination (CLI exit code 2).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

/// Inputs that should line up (by index, id or length) do not (exit code 3).
class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& message) : Error("alignment", message) {}
};

/// Model artifact is missing, truncated or has the wrong version (exit code 4).
class ArtifactError : public Error {
 public:
  explicit ArtifactError(const std::string& message) : Error("artifact", message) {}
};

/// Rejection sampling in the scenario generator gave up.
class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& message) : Error("generation", message) {}
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error("domain", message) {}
};

/// Zero-variance data where a spread is required.
class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& message) : Error("degenerate", message) {}
};

/// Not enough data to fit a model.
class FittingError : public Error {
 public:
  explicit FittingError(const std::string& message) : Error("fitting", message) {}
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& message) : Error("training", message) {}
};

/// Structured-response text that does not satisfy the response schema.
class ParseError : public Error {
 public:
  enum class Reason { kSyntax, kMissingField, kUnknownAdvice, kWrongPathLength, kInvalidValue };

  ParseError(Reason reason, std::string field, const std::string& message)
      : Error("parse", message), reason_(reason), field_(std::move(field)) {}

  Reason reason() const noexcept { return reason_; }
  /// Name of the offending field (empty for syntax errors).
  const std::string& field() const noexcept { return field_; }

 private:
  Reason reason_;
  std::string field_;
};

}  // namespace pathdiff
