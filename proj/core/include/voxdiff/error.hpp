#pragma once

#include <stdexcept>
#include <string>

namespace voxdiff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class DegenerateIntensityRange : public Error {
 public:
  using Error::Error;
};

class PatchOutOfBounds : public Error {
 public:
  using Error::Error;
};

class InvalidVolume : public Error {
 public:
  using Error::Error;
};

// File-format errors. Each parse failure has its own type so callers can
// distinguish a wrong file from a damaged one.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagic : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedVersion : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedPayload : public FormatError {
 public:
  using FormatError::FormatError;
};

class DimMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace voxdiff
