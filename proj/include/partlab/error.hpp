#pragma once

#include <stdexcept>
#include <string>

namespace partlab {

/// Base of all library errors. Each subclass maps to one CLI exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (OBJ, JSON, MCV1).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Well-formed input that violates a contract.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Failure talking to an external scorer process.
class TransportError : public Error {
public:
    using Error::Error;
};

} // namespace partlab
