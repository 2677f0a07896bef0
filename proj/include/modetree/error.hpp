#pragma once

#include <stdexcept>
#include <string>

namespace modetree {

// Base for all library errors. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration: bad dimensions, flags, hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data: parse failures, dimension mismatches,
// schema violations, unknown ids, I/O failures.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Numerically degenerate input: zero gradients, zero value ranges, no usable
// candidate node.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

}  // namespace modetree
