#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "volterra/grid.hpp"

namespace volterra {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Generator callable g(t, s, x, y, z, y_diag, z_diag) -> out (k-vector).
/// z and z_diag are k x n_w.  The out-parameter form keeps the hot path
/// allocation-free; implementations must be pure functions.
using GeneratorFn = std::function<void(
    double t, double s,
    const Eigen::Ref<const VectorXd>& x,
    const Eigen::Ref<const VectorXd>& y,
    const Eigen::Ref<const MatrixXd>& z,
    const Eigen::Ref<const VectorXd>& y_diag,
    const Eigen::Ref<const MatrixXd>& z_diag,
    Eigen::Ref<VectorXd> out)>;

using StateFn = std::function<VectorXd(double s, const Eigen::Ref<const VectorXd>& x)>;
using JacobianFn = std::function<MatrixXd(double s, const Eigen::Ref<const VectorXd>& x)>;
using DiffusionFn = std::function<MatrixXd(double s)>;
using TerminalFn = std::function<VectorXd(double t, const Eigen::Ref<const VectorXd>& x)>;

/// Full specification of a Markovian forward-backward system:
///   dX(s) = b(s, X)ds + sigma(s)dB(s)
///   dY(t,s) = g(t, s, X, Y(t,s), Z(t,s), Y(s,s), Z(s,s))ds + Z(t,s)dB(s)
///   Y(t,T) = h(t, X(T))
/// The diffusion is state-independent by type; the drift Jacobian is
/// analytic (consumed directly by the tangent/Malliavin formulas).
struct MarkovianModel {
    int state_dim = 1;  ///< d
    int sol_dim = 1;    ///< k
    int noise_dim = 1;  ///< n_w

    StateFn drift;              ///< b(s, x) -> d
    JacobianFn drift_jacobian;  ///< b_x(s, x) -> d x d
    DiffusionFn diffusion;      ///< sigma(s) -> d x n_w

    GeneratorFn generator;      ///< g
    GeneratorFn generator_t;    ///< optional d/dt of g (null -> FD fallback)
    TerminalFn terminal;        ///< h(t, x) -> k
    TerminalFn terminal_t;      ///< optional d/dt of h (null -> FD fallback)

    /// Floor for the smallest eigenvalue of sigma*sigma^T (uniform ellipticity).
    double ellipticity_floor = 1e-8;

    /// Scalar models only: simulated paths reflect at this floor
    /// (used by Bessel-type state processes that must stay positive).
    std::optional<double> reflecting_floor;
};

struct ValidationCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    double min_diffusion_eigenvalue = 0.0;
    bool passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
};

/// Side-effect-free model audit: ellipticity of sigma*sigma^T at every grid
/// time, output dimensions of every callable at every probe point.
ValidationReport validate_model(const MarkovianModel& model,
                                const TriangularGrid& grid,
                                const std::vector<VectorXd>& probe_points);

/// Runs validate_model and throws DegenerateDiffusion / DimensionMismatch
/// on the first failing check.
void ensure_valid(const MarkovianModel& model, const TriangularGrid& grid,
                  const std::vector<VectorXd>& probe_points);

} // namespace volterra
