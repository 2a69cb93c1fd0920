#pragma once

#include <stdexcept>
#include <string>

namespace panelstate {

/// Invalid configuration: a named field violates a constraint.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical or algorithmic failure that aborts a computation.
class RuntimeAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace panelstate
