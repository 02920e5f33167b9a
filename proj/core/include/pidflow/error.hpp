#pragma once

#include <stdexcept>
#include <string>

namespace pidflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: broken invariants, bad store contents, wrong shapes.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: singular covariance, divergent training, NaN.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure while reading or writing artifacts.
class IoError : public Error {
public:
    using Error::Error;
};

/// Prefixes an error message with a context string, preserving the error type.
[[noreturn]] void rethrow_with_context(const std::string& context);

}  // namespace pidflow
