#pragma once

#include <stdexcept>
#include <string>

namespace gazekit {

// Base for every recoverable data/validation failure. The CLI maps these to
// exit code 1; usage errors are handled separately.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IntegrityError : public Error {
public:
    IntegrityError(const std::string& what, std::size_t row)
        : Error(what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

// Statistic or metric undefined for the given input (constant map, zero variance, ...).
class DegenerateError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace gazekit
