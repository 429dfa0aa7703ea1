#pragma once

#include <stdexcept>
#include <string>

namespace causpref {

// Error taxonomy mirrors the CLI exit codes: usage/config problems map to
// exit 1, data/file problems to 2, numerical failures to 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// Contract violations inside the numeric engine (shape mismatches etc.).
struct ShapeError : Error {
  using Error::Error;
};

}  // namespace causpref
