#pragma once

#include <stdexcept>
#include <string>

namespace rdistill {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, dimension mismatches, violated
/// preconditions. The CLI maps these to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not produce a trustworthy result
/// (non-convergence, unexpected non-finite intermediate values).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace rdistill
