#pragma once

#include <stdexcept>
#include <string>

namespace blockq {

// Root of every error raised by the library. `kind()` is a stable,
// machine-parsable tag used by the CLI's one-line error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};

// A caller broke an operation's precondition (illegal action, terminal state, ...).
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& what) : Error("contract", what) {}
};

// Well-formed input that violates a domain rule (must start with B(0), depth bound, ...).
class ConstraintError : public Error {
 public:
  explicit ConstraintError(const std::string& what) : Error("constraint", what) {}
};

class CatalogError : public Error {
 public:
  explicit CatalogError(const std::string& what) : Error("catalog", what) {}
};

class SpatialUnderflowError : public Error {
 public:
  explicit SpatialUnderflowError(const std::string& what) : Error("spatial_underflow", what) {}
};

class ChannelMismatchError : public Error {
 public:
  explicit ChannelMismatchError(const std::string& what) : Error("channel_mismatch", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error("integrity", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace blockq
