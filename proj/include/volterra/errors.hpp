#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace volterra {

/// Base class for every failure raised by the solver suite.
class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised by configuration parsing/validation (bad JSON, unknown keys,
/// out-of-range values). Maps to exit code 2 at the CLI boundary.
class ConfigError : public SolverError {
public:
    using SolverError::SolverError;
};

// model / grid
class DegenerateDiffusion : public SolverError {
public:
    using SolverError::SolverError;
};
class DimensionMismatch : public SolverError {
public:
    using SolverError::SolverError;
};
class InvalidHorizon : public SolverError {
public:
    using SolverError::SolverError;
};

// forward simulation
class NonFiniteState : public SolverError {
public:
    using SolverError::SolverError;
};
class SingularTangent : public SolverError {
public:
    using SolverError::SolverError;
};

// pde
class CflViolation : public SolverError {
public:
    using SolverError::SolverError;
};
class NonFiniteField : public SolverError {
public:
    using SolverError::SolverError;
};

// bsvie
class NonFiniteSolution : public SolverError {
public:
    using SolverError::SolverError;
};
class MissingDerivativeCallables : public SolverError {
public:
    using SolverError::SolverError;
};
class GridMismatch : public SolverError {
public:
    using SolverError::SolverError;
};
class PathsOutsideSpatialGrid : public SolverError {
public:
    PathsOutsideSpatialGrid(const std::string& what, double fraction)
        : SolverError(what), fraction(fraction) {}
    double fraction; ///< fraction of (node, path) samples outside the grid
};

/// Picard iteration hit max_iters before the diagonal stabilized.
/// Carries the per-iteration sup-differences observed so far.
class PicardNoConvergence : public SolverError {
public:
    PicardNoConvergence(const std::string& what, std::vector<double> history)
        : SolverError(what), history(std::move(history)) {}
    std::vector<double> history;
};

// mean-variance application
class InvalidStateModel : public SolverError {
public:
    using SolverError::SolverError;
};
class SigmaFloorBreach : public SolverError {
public:
    using SolverError::SolverError;
};

} // namespace volterra
