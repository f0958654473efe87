#pragma once

#include <stdexcept>
#include <string>

namespace acnorm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training-mode standardization needs at least two rows.
struct InvalidBatchError : Error {
    using Error::Error;
};

// Non-finite values in inputs, losses, or statistics.
struct NumericError : Error {
    using Error::Error;
};

// Bad configuration values (temperature <= 0, unknown norm kind, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Architecture description is internally inconsistent.
struct SpecError : Error {
    using Error::Error;
};

// Checkpoint and model do not line up; message lists offending names.
struct SurgeryError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct ProbeError : Error {
    using Error::Error;
};

struct InputError : Error {
    using Error::Error;
};

} // namespace acnorm
