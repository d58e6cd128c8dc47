#pragma once

#include <stdexcept>
#include <string>

namespace circuitkl {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller misuse: bad parameters, invalid configuration, out-of-range queries.
// The CLI maps these to exit code 1.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Bad input data: malformed files, shape mismatches, inconsistent datasets.
// The CLI maps these to exit code 2.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

} // namespace circuitkl
