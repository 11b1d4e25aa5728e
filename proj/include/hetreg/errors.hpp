#pragma once

#include <stdexcept>
#include <string>

namespace hetreg {

// Misconfiguration distinct from runtime failures; the CLI maps this to exit 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files (datasets, checkpoints, configs on disk).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hetreg
