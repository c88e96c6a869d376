#pragma once

#include <stdexcept>
#include <string>

namespace fga {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/rank mismatches and degenerate sizes.
struct DimError : Error {
  using Error::Error;
};

// Invalid user-supplied parameters (out-of-range knobs, bad templates, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed files: bad magic, version, truncation, record layout.
struct FormatError : Error {
  using Error::Error;
};

// Missing or unreadable/unwritable files.
struct IoError : Error {
  using Error::Error;
};

struct TrainError : Error {
  using Error::Error;
};

struct AttackError : Error {
  using Error::Error;
};

// Non-finite or otherwise numerically invalid values.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace fga
