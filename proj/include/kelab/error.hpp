#pragma once

#include <stdexcept>
#include <string>

namespace kelab {

// Error categories map onto CLI exit codes: config/validation -> 2,
// numerical -> 3, i/o -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

struct ValidationError : ConfigError {
    using ConfigError::ConfigError;
};

struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Container loading failures, reported distinctly.
struct CorruptHeaderError : IoError {
    using IoError::IoError;
};

struct TruncatedFileError : IoError {
    using IoError::IoError;
};

struct TensorShapeMismatchError : IoError {
    using IoError::IoError;
};

}  // namespace kelab
