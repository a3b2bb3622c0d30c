#pragma once

#include <stdexcept>
#include <string>

namespace rax {

// Maps onto the CLI exit codes: Usage/Config -> 1, Data -> 2, Backend -> 3.
enum class ErrorKind { Config = 1, Data = 2, Backend = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Short machine-readable identifier, e.g. "schema_mismatch".
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string code, const std::string& message)
      : Error(ErrorKind::Config, std::move(code), message) {}
};

class DataError : public Error {
 public:
  DataError(std::string code, const std::string& message)
      : Error(ErrorKind::Data, std::move(code), message) {}
};

class BackendError : public Error {
 public:
  BackendError(std::string code, const std::string& message)
      : Error(ErrorKind::Backend, std::move(code), message) {}
};

}  // namespace rax
