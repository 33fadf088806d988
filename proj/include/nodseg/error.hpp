#pragma once

#include <stdexcept>
#include <string>

namespace nodseg {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files (MetaImage headers, CSV tables, manifests).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Raw payload shorter or longer than the header declares.
class TruncationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A persisted dataset violates one of its invariants.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Numeric parameter outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Nodule centre falls outside the scan.
class PlacementError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration: shapes, group names, fold layout, config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Raised when a loss becomes non-finite during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace nodseg
