#pragma once

#include <stdexcept>
#include <string>

namespace cortex {

// Bad configuration input (unknown keys, out-of-range parameters, missing presets).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error("ConfigError: " + what) {}
};

// A simulation invariant broke mid-run (capacity, accounting, clock). Always a bug.
class InvariantViolation : public std::logic_error {
public:
    explicit InvariantViolation(const std::string& what)
        : std::logic_error("InternalInvariantViolation: " + what) {}
};

}  // namespace cortex
