#pragma once

#include <stdexcept>
#include <string>

namespace pebm {

// Base class for all toolkit errors. Subclasses map onto CLI exit codes:
// config/usage problems -> 1, data/contract problems -> 2, divergence -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes incompatible with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

// An object is in a state that forbids the requested operation
// (e.g. eval-mode batch norm with unpopulated running statistics).
class StateError : public Error {
public:
    using Error::Error;
};

// Malformed input file or stream.
class ParseError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or missing configuration dependency.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite value encountered in an iterative numeric procedure.
// Indices are -1 when not applicable.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& msg, long chain = -1, long step = -1,
                    long restart = -1)
        : Error(msg), chain_index(chain), step_index(step), restart_index(restart) {}

    long chain_index;
    long step_index;
    long restart_index;
};

} // namespace pebm
