#pragma once

#include <stdexcept>
#include <string>

namespace oscar {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf reached a tensor, a loss, or an optimizer input.
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed or truncated binary/text artifact.
class FormatError : public Error {
public:
    using Error::Error;
};

// Invalid user input: config keys, ranges, missing seed. Maps to CLI exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A pipeline stage was asked to run before its prerequisites exist.
class PipelineError : public Error {
public:
    using Error::Error;
};

}  // namespace oscar
