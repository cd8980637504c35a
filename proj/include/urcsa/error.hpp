#pragma once

#include <stdexcept>
#include <string>

namespace urcsa {

// Base for every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or sizes.
struct DimensionError : Error {
  using Error::Error;
};

// API misuse (non-scalar backward, missing gradients, ...).
struct UsageError : Error {
  using Error::Error;
};

// Checkpoint / parameter file errors. Each failure mode has its own type.
struct FormatError : Error {
  using Error::Error;
};
struct VersionError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct TruncatedError : Error {
  using Error::Error;
};
struct ConfigMismatchError : Error {
  using Error::Error;
};

// Image and filesystem errors.
struct FileNotFoundError : Error {
  using Error::Error;
};
struct UnsupportedDepthError : Error {
  using Error::Error;
};
struct NotAnImageError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// Run configuration parse errors.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace urcsa
