#pragma once

#include <stdexcept>
#include <string>

namespace optistack {

// Malformed catalog, task or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Arguments outside an operation's domain.
class InvalidInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation called out of order (e.g. stepping a finished episode).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite gradients or losses during an update.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace optistack
