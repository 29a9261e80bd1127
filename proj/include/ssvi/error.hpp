#pragma once

#include <stdexcept>
#include <string>

namespace ssvi {

/// Bad arguments: dimension mismatch, out-of-range index, malformed spec.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Config or file contents failed validation. Carries the offending field path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Numerical failure during a computation (overflow, factorization, cone violation).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssvi
