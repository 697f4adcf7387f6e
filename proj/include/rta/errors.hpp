#pragma once

#include <stdexcept>
#include <string>

namespace rta {

// Base error for the whole library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/primitive shape violations; message names the primitive and dims.
struct ShapeError : Error {
  using Error::Error;
};

// Bad configuration values; message names the offending field.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem failures; message carries the path.
struct IoError : Error {
  using Error::Error;
};

// A required input artifact (checkpoint, task set) is absent or empty.
struct MissingInputError : Error {
  using Error::Error;
};

}  // namespace rta
