#pragma once

#include <stdexcept>
#include <string>

namespace zlik {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kDataFormat = 3,
  kMissingArtifact = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kFailure)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Argument outside the mathematical domain of an operation (NaN angle, N < 2, ...).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what) {}
};

// Sequence too short or of the wrong length.
class LengthError : public Error {
 public:
  explicit LengthError(const std::string& what) : Error(what) {}
};

// Tensor / array shape mismatch.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what) {}
};

class LookupError : public Error {
 public:
  explicit LookupError(const std::string& what) : Error(what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what, ExitCode::kDataFormat) {}
};

class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(const std::string& what)
      : Error(what, ExitCode::kMissingArtifact) {}
};

}  // namespace zlik
