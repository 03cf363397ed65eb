#pragma once

#include <stdexcept>
#include <string>

namespace esle {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid argument values (out-of-range coordinates, bad configuration).
struct ValueError : Error {
    using Error::Error;
};

// Incompatible tensor/vector shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed files: bad magic, truncation, unparseable JSON.
struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// A metric that has no defined value for the given input.
struct UndefinedMetricError : Error {
    using Error::Error;
};

} // namespace esle
