#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace dsdf {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible extents, ranks, or sizes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Misuse of an API contract (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFormatError : public DecodeError {
 public:
  using DecodeError::DecodeError;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

}  // namespace dsdf
