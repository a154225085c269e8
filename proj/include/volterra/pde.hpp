#pragma once

#include <string>
#include <vector>

#include "volterra/model.hpp"

namespace volterra {

/// Ragged scalar field u[m][n][i] over the two-time triangle x spatial grid.
class TwoTimeField {
public:
    TwoTimeField(TriangularGrid grid, SpatialGrid space)
        : grid_(grid), space_(space),
          values_(grid.node_count() * space.points(), 0.0) {}

    const TriangularGrid& grid() const { return grid_; }
    const SpatialGrid& space() const { return space_; }

    double* level(int m, int n) {
        return values_.data() + grid_.node_index(m, n) * space_.points();
    }
    const double* level(int m, int n) const {
        return values_.data() + grid_.node_index(m, n) * space_.points();
    }
    double value(int m, int n, int i) const { return level(m, n)[i]; }
    double& value(int m, int n, int i) { return level(m, n)[i]; }

    /// Piecewise-linear interpolation in x at triangle node (m, n).
    /// x must lie inside the spatial grid.
    double interpolate(int m, int n, double x) const;

private:
    TriangularGrid grid_;
    SpatialGrid space_;
    std::vector<double> values_;
};

struct PDESolverConfig {
    enum class Scheme { Explicit, SemiImplicitDiffusion };
    enum class Boundary { LinearExtrapolation, FrozenTerminal };
    Scheme scheme = Scheme::SemiImplicitDiffusion;
    Boundary boundary = Boundary::LinearExtrapolation;
    double cfl_safety = 0.9;  // explicit scheme requires dt <= cfl_safety*dx^2/max sigma^2
    /// Inner fixed-point sweeps re-evaluating the diagonal at the current
    /// level (0 = pure one-level diagonal lag).
    int diagonal_sweeps = 0;
    int threads = 1;
};

/// Finite-difference solver for the nonlocal semilinear PDE
///   u_s + 1/2 (sigma sigma^T)(s) u_xx + b(s,x) u_x
///     - g(t, s, x, u, u_x sigma, u(s,s,x), u_x(s,s,x) sigma) = 0,
///   u(t,T,x) = h(t,x)
/// on the triangle, marching n = N-1..0.  The nonlocal arguments at level n
/// come from the already-computed level n+1 diagonal (explicit lag).
/// Boundary nodes are filled per config (linear extrapolation imposes
/// u_xx = 0 there).  Requires d = 1; k = 1.
TwoTimeField solve_nonlocal_pde(const MarkovianModel& model,
                                const TriangularGrid& grid,
                                const SpatialGrid& space,
                                const PDESolverConfig& config);

/// k >= 1 variant: components are stepped componentwise with the coupled
/// generator evaluated vectorially each level.
std::vector<TwoTimeField> solve_nonlocal_pde_system(const MarkovianModel& model,
                                                    const TriangularGrid& grid,
                                                    const SpatialGrid& space,
                                                    const PDESolverConfig& config);

/// Diagonal slice v[n][i] = u[n][n][i].
std::vector<std::vector<double>> diagonal_slice(const TwoTimeField& field);

/// Spatial gradient of a field: central differences in the interior,
/// second-order one-sided at the boundaries.
TwoTimeField gradient_x(const TwoTimeField& field, const SpatialGrid& space);

/// Standard (local) semilinear solve at one fixed reference time t: the same
/// stepping kernel with the diagonal arguments replaced by placeholders.
/// When g ignores its diagonal arguments this reproduces the nonlocal
/// solution at that t bit-exactly.  Returns u[n][i].
std::vector<std::vector<double>> solve_semilinear_slice(
    const MarkovianModel& model, double t, const TriangularGrid& grid,
    const SpatialGrid& space, const PDESolverConfig& config);

/// Field export: CSV columns (m, n, t, s, i, x, u, u_x).
void export_field_csv(const TwoTimeField& field, const std::string& path);

} // namespace volterra
