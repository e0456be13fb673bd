#pragma once

#include <stdexcept>
#include <string>

namespace pascl {

// Malformed arguments: shape mismatches, out-of-range labels, bad ranges.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation was called in the wrong lifecycle state (e.g. AUX branch
// before it was cloned from MAIN).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid or unknown configuration entry. `key()` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what),
        key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Missing, unreadable or inconsistent data / checkpoint files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pascl
