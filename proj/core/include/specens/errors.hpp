#pragma once

#include <stdexcept>
#include <string>

namespace specens {

// Base class for every error raised by the library. User-facing tools map
// these to exit code 2, except InternalInvariantViolation which maps to 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A training corpus that cannot be used (empty, unreadable, ...).
struct InvalidCorpus : Error {
  using Error::Error;
};

// A structurally broken configuration value or artifact.
struct InvalidConfig : Error {
  using Error::Error;
};

// A token id outside the vocabulary of the tokenizer asked to decode it.
struct UnknownToken : Error {
  using Error::Error;
};

// An index outside the token sequence it refers to.
struct InvalidPosition : Error {
  using Error::Error;
};

// A decode trace that cannot support the requested statistic.
struct InvalidTrace : Error {
  using Error::Error;
};

// A broken internal assumption. Seeing this means a bug, not a user error.
struct InternalInvariantViolation : Error {
  using Error::Error;
};

}  // namespace specens
