#pragma once
#include <stdexcept>
#include <string>

namespace rpk {

// Base class for every error the library throws. The CLI maps these onto
// its exit-code contract; nothing below ever calls std::abort.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not compose.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A computation produced NaN/Inf or was handed non-finite input.
class NumericError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure (open/read/write).
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed container, config, or dataset file.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace rpk
