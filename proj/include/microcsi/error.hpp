#pragma once

#include <stdexcept>
#include <string>

namespace microcsi {

/// Base for all errors raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid signal configuration or parameters (caller mistake).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed, inconsistent or numerically unusable data.
class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace microcsi
