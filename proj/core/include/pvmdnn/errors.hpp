#pragma once

#include <stdexcept>
#include <string>

namespace pvmdnn {

// Invalid configuration, shape mismatch, or violated precondition.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file, failed read/write, or unwritable path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite state or diverging optimization.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pvmdnn
