#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mate {

// Every failure raised by the library derives from Error; the CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller broke an API contract (wrong tensor rank, no active tape, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class DimensionError : public ContractError {
public:
    using ContractError::ContractError;
};

class RangeError : public ContractError {
public:
    using ContractError::ContractError;
};

// NaN/+Inf produced by an op, or a softmax row with no finite entry.
class NumericsError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public NumericsError {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : NumericsError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

// Malformed or truncated file, unpaired dataset entries, unreadable paths.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace mate
