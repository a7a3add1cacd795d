#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor shapes or extents.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration values.
struct ConfigError : Error {
  using Error::Error;
};

// Invalid numeric state (non-finite loss, bad targets, ...).
struct NumericError : Error {
  using Error::Error;
};

// Dataset / partitioning failures.
struct DataError : Error {
  using Error::Error;
};

// Checkpoint and artifact serialization failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fedsim
