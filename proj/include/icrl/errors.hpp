#pragma once
#include <stdexcept>
#include <string>

namespace icrl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad run configuration (unknown environment, invalid hyperparameters, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Rejected caller input (token not in vocabulary, malformed context, ...).
struct InputError : Error {
  using Error::Error;
};

// Internal bookkeeping went inconsistent (mixed queries in a group,
// token/context mismatch during rescoring, stepping a finished episode).
struct IntegrityError : Error {
  using Error::Error;
};

// Non-finite value surfaced in a numeric computation.
struct NumericalError : Error {
  using Error::Error;
};

// Exhaustive enumeration would exceed the configured size bound.
struct EnumerationBoundError : Error {
  using Error::Error;
};

}  // namespace icrl
