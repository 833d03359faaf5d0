#pragma once

#include <stdexcept>
#include <string>

namespace wnet {

/// Base class for every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape / axis mismatch. The message names the offending axis.
class DimError : public Error {
 public:
  explicit DimError(const std::string& msg) : Error(msg) {}
};

/// Malformed file content (HEADS, DMAP, WNTC, config, PNM).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

/// Filesystem-level failure (missing file, short write, ...).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Bad configuration value or unknown key.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// NaN/Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace wnet
