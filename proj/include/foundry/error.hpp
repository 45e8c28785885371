#pragma once

#include <stdexcept>
#include <string>

namespace foundry {

// Root of every error the library throws. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk or on-wire data: tar, manifest, stats.json, tensors.
class FormatError : public Error {
public:
    using Error::Error;
};

// Bad numeric content, e.g. NaN/Inf in an input field.
class DataError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

}  // namespace foundry
