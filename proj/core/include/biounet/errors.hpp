#pragma once

#include <stdexcept>
#include <string>

namespace biounet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or sizes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong lifecycle state (consumed tape,
/// uninitialized statistics, double normalization, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Precondition on argument values violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint container is malformed or does not match the architecture.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration. `key_path` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key_path, const std::string& what)
      : Error(key_path.empty() ? what : key_path + ": " + what), key_path_(std::move(key_path)) {}

  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

/// File system or file-format failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace biounet
