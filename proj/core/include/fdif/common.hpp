#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fdif {

// Base class for all recoverable errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};
struct OddLengthError : Error {
  using Error::Error;
};
struct OverflowError : Error {
  using Error::Error;
};
struct PrimeInputError : Error {
  using Error::Error;
};
struct ExhaustedRetriesError : Error {
  using Error::Error;
};
struct NonFiniteLossError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

// Checkpoint I/O failures, one subclass per spec'd condition.
struct CheckpointError : Error {
  using Error::Error;
};
struct BadMagicError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct VersionMismatchError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct ShapeMismatchError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct TruncatedFileError : CheckpointError {
  using CheckpointError::CheckpointError;
};

#define FDIF_REQUIRE(cond, exc, msg) \
  do {                               \
    if (!(cond)) throw exc(msg);     \
  } while (0)

}  // namespace fdif
