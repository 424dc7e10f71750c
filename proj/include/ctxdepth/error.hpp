#pragma once

#include <stdexcept>
#include <string>

namespace ctxdepth {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration or call argument is outside its allowed range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A numeric value is outside the domain of a function (e.g. ln of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An object was used before it reached the required state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// No valid pixels, or otherwise impossible evaluation.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint incompatible with the network it is loaded into.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. `kind()` distinguishes the failure.
class ParseError : public Error {
 public:
  enum class Kind { kMalformedHeader, kTruncatedPayload, kMissingSidecar, kFormat, kIo };

  ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctxdepth
