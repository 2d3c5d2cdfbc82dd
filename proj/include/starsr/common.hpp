#pragma once

#include <stdexcept>
#include <string>

namespace starsr {

// Error categories map to CLI exit codes: config -> 1, data -> 2, numeric -> 3.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a loss term goes non-finite during training.
struct DivergenceError : NumericError {
  explicit DivergenceError(const std::string& msg) : NumericError(msg) {}
};

}  // namespace starsr
