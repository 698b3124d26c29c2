#pragma once

#include <stdexcept>
#include <string>

namespace scan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or spatial sizes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// API misuse: wrong resolution for a stage, loss not on the tape, etc.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Values outside their documented domain (e.g. fusion weights not in (0,1)).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content (bad PPM header, invalid JSON).
class ParseError : public IoError {
 public:
  using IoError::IoError;
};

/// Checkpoint manifest is unreadable or inconsistent with the pipeline.
class ManifestError : public IoError {
 public:
  using IoError::IoError;
};

/// A binary blob is shorter than its manifest says.
class TruncatedError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace scan
