#pragma once

#include <stdexcept>
#include <string>

namespace spfg {

// Bad input data: malformed files, invariant violations, unknown labels.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad invocation: unknown command, missing flag, inconsistent options.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An external generator or judge service could not be reached.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spfg
