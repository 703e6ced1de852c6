#pragma once

#include <stdexcept>
#include <string>

namespace loralab {

// Base class for every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid argument values (counts, densities, empty lists, ...).
struct ParameterError : Error {
    using Error::Error;
};

// Malformed input file; message carries file/field context.
struct ParseError : Error {
    using Error::Error;
};

// Shape or interface contract violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// Feature vector numerically dead (norm below the epsilon floor).
struct DegenerateFeatures : Error {
    using Error::Error;
};

// StrictOneHot edit requested but the model does not currently predict
// the stated old target on the edit prompt.
struct StaleBaseFact : Error {
    using Error::Error;
};

// Multi-fact edit with an ill-conditioned feature Gram matrix.
struct SingularGram : Error {
    using Error::Error;
};

// Numerical minimality oracle failed to converge.
struct OracleFailed : Error {
    using Error::Error;
};

// Adapter is identically zero where a direction is required.
struct DegenerateAdapter : Error {
    using Error::Error;
};

// Kernel input with zero norm.
struct DegenerateInput : Error {
    using Error::Error;
};

// Mixture decomposition against a linearly dependent basis.
struct DegenerateBasis : Error {
    using Error::Error;
};

// Singular linear system in a solver (e.g. colliding feature vectors).
struct NumericalError : Error {
    using Error::Error;
};

} // namespace loralab
