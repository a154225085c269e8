#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "volterra/model.hpp"

namespace volterra {

/// Euler-Maruyama path ensemble.  Storage is level-major so per-level
/// regressions read contiguous slabs: state(n, j) and increment(n, j).
/// Increments are drawn per path from the counter stream (seed, j), which
/// makes regeneration bit-identical regardless of worker count.
class PathEnsemble {
public:
    PathEnsemble(TriangularGrid grid, int state_dim, int noise_dim,
                 std::size_t n_paths, double t0, VectorXd x0, std::uint64_t seed);

    const TriangularGrid& grid() const { return grid_; }
    int state_dim() const { return d_; }
    int noise_dim() const { return nw_; }
    std::size_t paths() const { return paths_; }
    double t0() const { return t0_; }
    int t0_index() const { return t0_index_; }
    const VectorXd& x0() const { return x0_; }
    std::uint64_t seed() const { return seed_; }

    double* state_level(int n) { return states_.data() + level_stride_ * n; }
    const double* state_level(int n) const { return states_.data() + level_stride_ * n; }
    double* increment_level(int n) { return increments_.data() + inc_stride_ * n; }
    const double* increment_level(int n) const { return increments_.data() + inc_stride_ * n; }

    Eigen::Map<const VectorXd> state(int n, std::size_t j) const {
        return Eigen::Map<const VectorXd>(state_level(n) + j * d_, d_);
    }
    Eigen::Map<const VectorXd> increment(int n, std::size_t j) const {
        return Eigen::Map<const VectorXd>(increment_level(n) + j * nw_, nw_);
    }

    double scalar_state(int n, std::size_t j) const { return state_level(n)[j]; }

private:
    friend PathEnsemble simulate_paths(const MarkovianModel&, double,
                                       const VectorXd&, const TriangularGrid&,
                                       std::size_t, std::uint64_t, int);
    TriangularGrid grid_;
    int d_;
    int nw_;
    std::size_t paths_;
    double t0_;
    int t0_index_;
    VectorXd x0_;
    std::uint64_t seed_;
    std::size_t level_stride_;
    std::size_t inc_stride_;
    std::vector<double> states_;     // (N+1) x J x d
    std::vector<double> increments_; // N x J x n_w
};

/// Simulates J Euler-Maruyama paths of the model's forward SDE started at
/// (t0, x0); t0 must coincide with a grid node.  Nodes before t0 hold x0.
/// Throws NonFiniteState if any path blows up.
PathEnsemble simulate_paths(const MarkovianModel& model, double t0,
                            const VectorXd& x0, const TriangularGrid& grid,
                            std::size_t n_paths, std::uint64_t seed,
                            int threads = 1);

/// Pathwise tangent process dX/dx0.  For d = 1 this is the exponential of
/// the Euler-summed Jacobian integral; for d > 1 the matrix ODE
/// d(grad X) = b_x grad X ds is stepped with the same Euler scheme as the
/// paths (Jacobians at different times generally do not commute).
class TangentField {
public:
    TangentField(TriangularGrid grid, int d, std::size_t n_paths);

    Eigen::Map<const MatrixXd> value(int n, std::size_t j) const {
        return Eigen::Map<const MatrixXd>(
            data_.data() + (static_cast<std::size_t>(n) * paths_ + j) * d_ * d_, d_, d_);
    }
    Eigen::Map<MatrixXd> value(int n, std::size_t j) {
        return Eigen::Map<MatrixXd>(
            data_.data() + (static_cast<std::size_t>(n) * paths_ + j) * d_ * d_, d_, d_);
    }
    int state_dim() const { return d_; }
    std::size_t paths() const { return paths_; }
    const TriangularGrid& grid() const { return grid_; }

private:
    TriangularGrid grid_;
    int d_;
    std::size_t paths_;
    std::vector<double> data_;
};

TangentField tangent_process(const MarkovianModel& model,
                             const PathEnsemble& ensemble, int threads = 1);

/// Malliavin derivative D_theta X(s) per path via the tangent identity
/// grad X(s) (grad X(theta))^{-1} sigma(theta); zero matrix when theta > s.
/// Throws SingularTangent if grad X(theta) is numerically singular.
std::vector<MatrixXd> malliavin_derivative_x(const MarkovianModel& model,
                                             const PathEnsemble& ensemble,
                                             const TangentField& tangent,
                                             int theta_index, int s_index);

/// Convenience overload that computes the tangent field internally.
std::vector<MatrixXd> malliavin_derivative_x(const MarkovianModel& model,
                                             const PathEnsemble& ensemble,
                                             int theta_index, int s_index);

/// Re-propagates path j with dW[theta_index] bumped by eps in one noise
/// component, reusing the stored increments elsewhere.  Returns the bumped
/// path states, level-major ((N+1) x d).  Oracle for the Malliavin identity.
std::vector<double> bump_repropagate(const MarkovianModel& model,
                                     const PathEnsemble& ensemble, std::size_t j,
                                     int theta_index, int component, double eps);

/// Optional ensemble dump: CSV columns (path, n, s, x_1..x_d).
void dump_ensemble_csv(const PathEnsemble& ensemble, const std::string& path);

} // namespace volterra
