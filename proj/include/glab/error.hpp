#pragma once

#include <stdexcept>
#include <string>

namespace glab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A volatility value or bound outside the admissible set.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Malformed arguments or parameters.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Overflow, NaN, or too many non-finite paths.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Regression design too ill-conditioned to trust.
class SingularRegression : public Error {
 public:
  using Error::Error;
};

/// A request the chosen mode cannot answer honestly.
class UnsupportedMode : public Error {
 public:
  using Error::Error;
};

/// Config file problems; carries the offending line when known.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace glab
