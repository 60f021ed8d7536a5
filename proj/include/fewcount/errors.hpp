#pragma once

#include <stdexcept>
#include <string>

namespace fewcount {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid data: bad annotations, out-of-bounds boxes, malformed datasets.
struct ValidationError : Error {
    using Error::Error;
};

// Invalid configuration files or option combinations.
struct ConfigError : Error {
    using Error::Error;
};

// Corrupt, truncated or mismatched checkpoint files.
struct CheckpointError : Error {
    using Error::Error;
};

// Non-finite values, divergence, numerical failures.
struct NumericError : Error {
    using Error::Error;
};

// Tensor shape / rank contract violations.
struct ShapeError : Error {
    using Error::Error;
};

} // namespace fewcount
