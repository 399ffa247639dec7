#pragma once

#include <stdexcept>
#include <string>

namespace treerisk {

/// Base class for all validation and evaluation errors thrown by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Input validation errors (bad trees, processes, measures, specs).
struct ValidationError : Error {
    using Error::Error;
};

/// Numerical/evaluation errors (optimizers, infeasible families).
struct EvaluationError : Error {
    using Error::Error;
};

// --- tree / process -------------------------------------------------------

struct MalformedTree : ValidationError {
    using ValidationError::ValidationError;
};
struct BadProbabilities : ValidationError {
    using ValidationError::ValidationError;
};
struct BadMu : ValidationError {
    using ValidationError::ValidationError;
};
struct TimeOrder : ValidationError {
    using ValidationError::ValidationError;
};
struct BadDensity : ValidationError {
    using ValidationError::ValidationError;
};
struct MeasurabilityViolation : ValidationError {
    using ValidationError::ValidationError;
};

// --- measures / disintegration --------------------------------------------

struct NotSupermartingale : ValidationError {
    using ValidationError::ValidationError;
};
struct NegativeValue : ValidationError {
    using ValidationError::ValidationError;
};
struct BadStart : ValidationError {
    using ValidationError::ValidationError;
};
struct NotMartingale : ValidationError {
    using ValidationError::ValidationError;
};
struct BadGamma : ValidationError {
    using ValidationError::ValidationError;
};
struct ZeroDiscount : ValidationError {
    using ValidationError::ValidationError;
};
struct NotAbsContinuous : ValidationError {
    using ValidationError::ValidationError;
};

// --- risk measures ---------------------------------------------------------

struct MalformedSpec : ValidationError {
    using ValidationError::ValidationError;
};
struct UnsupportedKind : ValidationError {
    using ValidationError::ValidationError;
};
struct InconsistentInput : ValidationError {
    using ValidationError::ValidationError;
};
struct BadTermStructure : ValidationError {
    using ValidationError::ValidationError;
};

struct OptimizerFailed : EvaluationError {
    using EvaluationError::EvaluationError;
};
struct InfeasibleFamily : EvaluationError {
    using EvaluationError::EvaluationError;
};
struct InfinitePenalty : EvaluationError {
    using EvaluationError::EvaluationError;
};

}  // namespace treerisk
