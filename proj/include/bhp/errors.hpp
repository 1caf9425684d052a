#pragma once

#include <stdexcept>
#include <string>

namespace bhp {

// Error taxonomy used across the library. The CLI maps each class to a
// distinct exit code (input 2, numeric 3, io 4), so keep the hierarchy flat.

// Invalid arguments, malformed datasets, out-of-domain parameters.
class input_error : public std::runtime_error {
public:
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A computation that could not be completed reliably: non-convergence,
// underflow of a required quantity, inconsistent numeric state.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File-system level failures and corrupted/mismatched on-disk artifacts.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bhp
