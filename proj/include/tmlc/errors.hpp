#pragma once

#include <stdexcept>
#include <string>

namespace tmlc {

// Error taxonomy. The CLI maps ConfigError to exit code 1 and everything
// else to 2, so keep the split between "bad input" and "broke at runtime".
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/width mismatch between tensors or layers.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid user-facing configuration (sizes, rates, unknown keys, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed file on disk (IDX stream, snapshot JSON, checkpoint).
struct FormatError : Error {
    using Error::Error;
};

// A documented precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// Training diverged or produced non-finite numbers.
struct TrainingError : Error {
    using Error::Error;
};

} // namespace tmlc
