#ifndef NPNET_ERRORS_HPP
#define NPNET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace npnet {

// Invalid model or training configuration (maps to CLI usage errors).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape disagreement between operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing, unreadable or malformed input data.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed checkpoint file.
struct CheckpointError : DataError {
    using DataError::DataError;
};

// Non-finite values or failed numeric validation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace npnet

#endif
