#pragma once

#include <stdexcept>
#include <string>

namespace mmnet {

// Error hierarchy. The CLI maps each leaf to an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent extents, wrong ranks, mismatched parameter shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced or consumed, undefined rates, division by zero.
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed inputs on disk: missing files, bad labels, corrupt checkpoints.
class DataError : public Error {
public:
    using Error::Error;
};

// Invalid configuration values or unknown keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Precondition violated by the caller (e.g. backward on a consumed tape).
class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace mmnet
