#pragma once

#include <stdexcept>
#include <string>

namespace hsps {

// Every failure raised by the library derives from Error so front ends can
// map the category onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke an ordering or shape precondition (e.g. unsorted stream).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data is valid but carries too little signal to form the estimate.
class EstimationError : public Error {
 public:
  using Error::Error;
};

// Fit did not converge; message carries the diagnostics.
class FitError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

// Requested work would exceed a capacity limit.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input file.
class DataError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, written or closed.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace hsps
