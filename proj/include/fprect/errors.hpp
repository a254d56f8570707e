#ifndef FPRECT_ERRORS_HPP
#define FPRECT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fprect {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file contents: bad headers, checksums, truncation.
struct ParseError : Error {
    using Error::Error;
};

// Caller passed inconsistent or degenerate arguments.
struct ArgumentError : Error {
    using Error::Error;
};

// A linear system could not be solved (rank deficiency, near-zero eigenvalue).
struct FitError : Error {
    using Error::Error;
};

// Filesystem-level failure, message carries the path.
struct IoError : Error {
    using Error::Error;
};

// Input image rejected by preprocessing (empty foreground).
struct PreprocessError : Error {
    using Error::Error;
};

// Tensor/layer shape mismatch, message names the layer.
struct ShapeError : Error {
    using Error::Error;
};

// CLI misuse; maps to exit code 1.
struct UsageError : Error {
    using Error::Error;
};

} // namespace fprect

#endif
