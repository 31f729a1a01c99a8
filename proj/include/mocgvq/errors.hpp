#pragma once

#include <stdexcept>
#include <string>

namespace mocgvq {

/// Dimension / shape mismatch between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Bad argument value (sizes, probabilities, ranges).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Object is in the wrong state for the requested operation.
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Structurally valid input that violates a domain invariant.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad configuration key or value.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Non-finite value where a finite one is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace mocgvq
