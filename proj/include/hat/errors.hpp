#pragma once

#include <stdexcept>
#include <string>

namespace hat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes that do not fit an operation's signature.
class DimensionError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

// Inconsistent hyperparameters or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

class BoundsError : public Error {
public:
    using Error::Error;
};

// Dataset/manifest content that violates a type invariant. The message names
// the offending record and field.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Finite-difference oracle could not be evaluated (non-finite objective).
class OracleFailure : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace hat
