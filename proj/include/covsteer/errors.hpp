#pragma once

#include <stdexcept>
#include <string>

namespace covsteer {

// Error categories map one-to-one onto the CLI exit codes (see tools/main.cpp):
// config 1, infeasible 2, numeric 3, io 4.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct InfeasibleError : std::runtime_error {
  explicit InfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace covsteer
