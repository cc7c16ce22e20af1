#pragma once

#include <stdexcept>
#include <string>

namespace dknav {

// Base class for every error thrown by the toolkit.  The CLI maps these to
// exit code 2 (bad input / failed validation), reserving 1 for usage errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be opened, read, written, or renamed.
class IoFailure : public Error {
 public:
  using Error::Error;
};

// File exists but its content does not match the expected format.
class MalformedFile : public Error {
 public:
  using Error::Error;
};

}  // namespace dknav
