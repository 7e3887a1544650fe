#pragma once

#include <stdexcept>
#include <string>

namespace ledit {

// Error taxonomy. Each maps to one failure class a caller can act on;
// everything derives from std::runtime_error so the CLI can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor extents or inner dimensions do not line up.
struct ShapeError : Error {
    using Error::Error;
};

// A parameter is outside its documented range.
struct ConfigError : Error {
    using Error::Error;
};

// A timestep index is outside the schedule.
struct StepError : Error {
    using Error::Error;
};

// A hook references a cache entry that does not exist, or directives clash.
struct HookError : Error {
    using Error::Error;
};

// An API contract was violated (non-scalar objective, bad index set, ...).
struct ContractError : Error {
    using Error::Error;
};

// Token id outside the vocabulary.
struct EncodingError : Error {
    using Error::Error;
};

// Non-finite or otherwise unusable input data.
struct InputError : Error {
    using Error::Error;
};

// An iterative optimization produced a non-finite objective.
struct DivergenceError : Error {
    using Error::Error;
};

// File parsing / serialization failure.
struct IoError : Error {
    using Error::Error;
};

// Cosine similarity of a zero-norm embedding.
struct UndefinedSimilarityError : Error {
    using Error::Error;
};

} // namespace ledit
