#pragma once

#include <stdexcept>
#include <string>

namespace tse {

// Error taxonomy shared across the toolkit. Each category maps to one
// failure class surfaced by the library API and the CLI exit codes.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values or shape mismatches.
struct ParameterError : Error {
    using Error::Error;
};

// Arithmetic that cannot proceed (division by zero, non-finite loss, ...).
struct NumericError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration (files, keys, model setup).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or unusable input data (audio too short, wrong sample rate).
struct InputError : Error {
    using Error::Error;
};

// Plugin asked to do something it does not support.
struct CapabilityError : Error {
    using Error::Error;
};

// Lookup of a label/asset that does not exist.
struct LookupError : Error {
    using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace tse
