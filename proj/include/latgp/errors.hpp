#pragma once

#include <stdexcept>
#include <string>

namespace latgp {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Base vector fed to the eigenvalue transform lacked the reflection
/// symmetry of a block-circulant first column.
struct NonSymmetricBaseError : Error {
    using Error::Error;
};

struct NegativeEigenvalueError : Error {
    explicit NegativeEigenvalueError(double min_eig)
        : Error("spectrum has negative eigenvalue, min = " + std::to_string(min_eig)),
          min_eigenvalue(min_eig) {}
    double min_eigenvalue;
};

struct DimensionError : Error {
    using Error::Error;
};

struct BreakdownZeroCurvatureError : Error {
    using Error::Error;
};

struct SingularConditioningSetError : Error {
    using Error::Error;
};

struct NotPositiveDefiniteError : Error {
    using Error::Error;
};

struct IncompleteLatticeError : Error {
    using Error::Error;
};

struct OptimizerFailedError : Error {
    using Error::Error;
};

struct InitializationError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace latgp
