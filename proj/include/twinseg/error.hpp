#pragma once

#include <stdexcept>
#include <string>

namespace twinseg {

// Input failed a schema or invariant check. `path` addresses the offending
// element, e.g. "frames[0].instances[2].mask".
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string path, const std::string& message)
      : std::runtime_error(path.empty() ? message : path + ": " + message),
        path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Document declares a schema_version this build does not read.
class SchemaVersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A remote policy or judge could not produce a usable reply.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything else that stops an operation: unreadable files, bad arguments.
class OperationalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace twinseg
