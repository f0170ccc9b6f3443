#pragma once

#include <stdexcept>
#include <string>

namespace prm {

// Error families map to CLI exit codes: usage/config -> 2, data/format -> 3,
// numeric -> 4. Everything else is a plain logic_error (a bug, not an input).

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : DataError {
    explicit FormatError(const std::string& msg) : DataError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace prm
