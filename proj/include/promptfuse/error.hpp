#pragma once

#include <stdexcept>
#include <string>

namespace promptfuse {

/// Base of every error the library throws. `exit_code()` follows the CLI
/// contract: 1 for validation-style failures, 2 for I/O failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Raised when samples on disk or in a split cannot satisfy a request.
class DataError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

}  // namespace promptfuse
