#pragma once

#include <stdexcept>
#include <string>

namespace fpforge {

// Bad input: shapes, config values, file contents. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failure while doing work on valid input (non-finite loss, I/O). Exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fpforge
