#pragma once

#include <stdexcept>
#include <string>

namespace collapse {

// Error taxonomy shared by the library and the CLI. Each class maps to a
// distinct process exit code so scripts can tell config mistakes from I/O
// failures from numerical blow-ups.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
  static constexpr int exit_code = 2;
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
  static constexpr int exit_code = 3;
};

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
  static constexpr int exit_code = 4;
};

}  // namespace collapse
