#pragma once

#include <memory>
#include <string>
#include <vector>

#include "volterra/forward.hpp"
#include "volterra/pde.hpp"
#include "volterra/regression.hpp"

namespace volterra {

struct BsvieSolverOptions {
    enum class DiagonalMode {
        ExplicitLag,  ///< nonlocal arguments from the level n+1 diagonal
        PicardInner   ///< refresh the level-n diagonal a fixed number of sweeps
    };
    DiagonalMode mode = DiagonalMode::ExplicitLag;
    int picard_inner_sweeps = 2;
    /// Micro-iteration re-evaluating the generator at the updated y
    /// (0 = explicit: the continuation value is passed as y).
    int implicit_y_sweeps = 0;
    /// Pathwise triangle values are kept for the first min(J, store_paths)
    /// paths; diagonal arrays and regression coefficients cover all paths.
    std::size_t store_paths = 4096;
    int threads = 1;
};

/// Regressed solution of the Markovian BSVIE on the triangular grid.
///
/// Full-path storage: the diagonal arrays Yd[n][j], Zd[n][j].  Triangle
/// storage: regression coefficients per (m, n) plus pathwise values for a
/// stored path subsample.  y_at/z_at reconstruct the pathwise value at any
/// state from the coefficients (bit-identical to the recursion's own values).
///
/// Terminal edge: Y(., N) = h(t, X(T)) exactly; Z(., N) is a one-sided
/// estimate regressed from the last Brownian increment (the backward
/// recursion never defines it), consistent to O(dt).
class BsvieSolution {
public:
    enum class Kind { Base, Derivative, PicardFamily };

    const TriangularGrid& grid() const { return grid_; }
    std::size_t paths() const { return paths_; }
    std::size_t stored_paths() const { return stored_; }
    int sol_dim() const { return k_; }
    int noise_dim() const { return nw_; }
    Kind kind() const { return kind_; }
    int ridge_fallbacks() const { return ridge_count_; }
    const std::shared_ptr<const PathEnsemble>& ensemble() const { return ensemble_; }
    const std::shared_ptr<const MarkovianModel>& model() const { return model_; }
    const RegressionBasis& basis() const { return basis_; }

    /// Raw diagonal arrays, level-major ((N+1) x J x k and x k x nw).
    const std::vector<double>& yd_array() const { return yd_; }
    const std::vector<double>& zd_array() const { return zd_; }

    /// Regression coefficients at node (m, n): Z columns indexed c*nw+w.
    const Eigen::MatrixXd& z_coeffs(int m, int n) const {
        return z_co_[grid_.node_index(m, n)];
    }
    const Eigen::MatrixXd& ycont_coeffs(int m, int n) const {
        return ycont_co_[grid_.node_index(m, n)];
    }
    const BasisEvaluator& level_basis(int n) const { return level_basis_[n]; }

    double yd(int n, std::size_t j, int c = 0) const {
        return yd_[(static_cast<std::size_t>(n) * paths_ + j) * k_ + c];
    }
    double zd(int n, std::size_t j, int c = 0, int w = 0) const {
        return zd_[((static_cast<std::size_t>(n) * paths_ + j) * k_ + c) * nw_ + w];
    }

    /// Stored-subsample pathwise values; j < stored_paths().
    double y_stored(int m, int n, std::size_t j, int c = 0) const {
        return ysub_[(grid_.node_index(m, n) * stored_ + j) * k_ + c];
    }
    double z_stored(int m, int n, std::size_t j, int c = 0, int w = 0) const {
        return zsub_[((grid_.node_index(m, n) * stored_ + j) * k_ + c) * nw_ + w];
    }

    /// Pathwise value reconstructed at an arbitrary state (k = 1 models).
    /// y_at requires Kind::Base (the generator enters the formula).
    double y_at(int m, int n, const double* x) const;
    double z_at(int m, int n, const double* x, int c = 0, int w = 0) const;
    /// Regressed continuation value (any kind).
    double ycont_at(int m, int n, const double* x, int c = 0) const;
    /// Lagged diagonal projections consumed by the generator at level n.
    double ydiag_proj_at(int n, const double* x, int c = 0) const;
    double zdiag_proj_at(int n, const double* x, int c = 0, int w = 0) const;

    /// Solution export: CSV (m, n, t, s, y_mean, y_std, z_mean, z_std,
    /// yd_mean, zd_mean) aggregated over stored paths.
    void export_csv(const std::string& path) const;

private:
    friend class BsvieEngine;
    TriangularGrid grid_{1.0, 1};
    std::shared_ptr<const MarkovianModel> model_;
    std::shared_ptr<const PathEnsemble> ensemble_;
    RegressionBasis basis_;
    Kind kind_ = Kind::Base;
    int k_ = 1;
    int nw_ = 1;
    std::size_t paths_ = 0;
    std::size_t stored_ = 0;
    int ridge_count_ = 0;
    int implicit_y_sweeps_ = 0;
    bool exact_eval_ = false;  // y_at reproduces recursion values bit-exactly

    std::vector<double> yd_;    // (N+1) x J x k
    std::vector<double> zd_;    // (N+1) x J x k x nw
    std::vector<double> ysub_;  // nodes x S x k
    std::vector<double> zsub_;  // nodes x S x k x nw
    // per node (m, n): continuation coefficients (p x k) and Z coefficients
    // (p x k*nw); per level: lagged diagonal projections and basis snapshot
    std::vector<Eigen::MatrixXd> ycont_co_;
    std::vector<Eigen::MatrixXd> z_co_;
    std::vector<Eigen::MatrixXd> ydp_co_;  // level n: projection of Yd[n+1]
    std::vector<Eigen::MatrixXd> zdp_co_;
    std::vector<BasisEvaluator> level_basis_;
};

/// Backward least-squares Monte Carlo recursion for the BSVIE
///   dY(t,s) = g(t,s,X,Y(t,s),Z(t,s),Y(s,s),Z(s,s))ds + Z(t,s)dB,
///   Y(t,T) = h(t, X(T)),
/// with the diagonal arguments handled per options.mode.  At level n, for
/// each m <= n:
///   Z[m][n] = regressed (Y[m][n+1] - Ehat[Y[m][n+1]]) dW^T/dt,
///   Y[m][n] = Ehat[Y[m][n+1]] - dt g(t_m, s_n, X_n, Ehat, Z[m][n], ...),
/// where the diagonal arguments are the level n+1 diagonals regressed onto
/// the level-n basis (explicit lag), optionally refreshed in place.  The
/// continuation residual in the Z target leaves the projection unchanged and
/// keeps its variance independent of 1/dt.
BsvieSolution solve_bsvie_mc(std::shared_ptr<const MarkovianModel> model,
                             const TriangularGrid& grid,
                             std::shared_ptr<const PathEnsemble> ensemble,
                             const RegressionBasis& basis,
                             const BsvieSolverOptions& options = {});

/// Solution of the same backward recursion applied to the t-derivative
/// system: dY_t = [g_t + g_Y Y_t + g_Z Z_t]ds + Z_t dB, Y_t(t,T) = h_t.
/// The coefficient action g_Y Y_t + g_Z Z_t is a directional derivative of
/// the generator along (Y_t, Z_t), evaluated along the regressed base
/// solution with the base's lagged diagonal projections; it is computed by
/// central differencing unless the generator is linear anyway.
struct DerivativeSolution {
    BsvieSolution solution;  ///< fields hold (Y_t, Z_t)
};

struct DerivativeOptions {
    bool allow_finite_difference = true;  ///< fallback for g_t / h_t
    double fd_time_step_rel = 1e-5;       ///< dt step = rel * T
    double fd_direction_step = 1e-6;
    int threads = 1;
    std::size_t store_paths = 4096;
};

DerivativeSolution solve_derivative_bsvie(const BsvieSolution& base,
                                          const DerivativeOptions& options = {});

/// Integral reconstruction of the diagonals over the stored path subsample:
///   Yd_rec[n][j] = Y[0][n][j] + trapezoid_{m=0..n} Y_t[m][n][j] dt
/// and likewise for Zd_rec.
struct DiagonalReconstruction {
    int steps = 0;
    std::size_t paths = 0;  // stored subsample size
    int k = 1, nw = 1;
    std::vector<double> yd_rec;  // (N+1) x S x k
    std::vector<double> zd_rec;  // (N+1) x S x k x nw
    double yd_at(int n, std::size_t j, int c = 0) const {
        return yd_rec[(static_cast<std::size_t>(n) * paths + j) * k + c];
    }
    double zd_at(int n, std::size_t j, int c = 0, int w = 0) const {
        return zd_rec[((static_cast<std::size_t>(n) * paths + j) * k + c) * nw + w];
    }
};

DiagonalReconstruction reconstruct_diagonal(const BsvieSolution& base,
                                            const DerivativeSolution& deriv);

/// Picard fixed point of the operator that freezes the diagonal pair,
/// solves the resulting family of parameterized BSDEs by backward
/// regression, and extracts new diagonals.  Stops when the sup-difference
/// of successive diagonal arrays falls below tol.
struct PicardResult {
    BsvieSolution solution;
    std::vector<double> history;  ///< per-iteration sup-differences
    int iterations = 0;
};

PicardResult picard_solve(std::shared_ptr<const MarkovianModel> model,
                          const TriangularGrid& grid,
                          std::shared_ptr<const PathEnsemble> ensemble,
                          const RegressionBasis& basis, int max_iters, double tol,
                          const BsvieSolverOptions& options = {});

/// Empirical S^BMO diagnostic: for each level the regressed conditional
/// tail sum of the squared process, maximized over fitted states (and over
/// m for triangle targets).  The maximum is taken over states inside the
/// central quantile band (state_trim per tail) -- fitted polynomials are
/// extrapolation noise at the extreme order statistics.
struct BmoEstimate {
    std::vector<double> profile;  ///< e[n]
    double norm = 0.0;            ///< max_n e[n]
};

enum class BmoTarget { Z, Zt, Yd, Zd };

/// For BmoTarget::Zt pass the derivative solution (its Z field is Z_t).
BmoEstimate estimate_bmo_norm(const BsvieSolution& solution, BmoTarget target,
                              const RegressionBasis& basis, int threads = 1,
                              double state_trim = 0.005);

/// Standard BSDE solved at one fixed reference time by the same level
/// kernel (diagonal machinery skipped).  When g ignores its diagonal
/// arguments this reproduces the BSVIE row at that t bit-exactly.
/// Returns pathwise Y[n][j*k+c] and Z[n][(j*k+c)*nw+w] for all paths.
struct BsdeSliceSolution {
    std::vector<double> y;  // (N+1) x J x k
    std::vector<double> z;  // (N+1) x J x k x nw
};

BsdeSliceSolution solve_bsde_slice(std::shared_ptr<const MarkovianModel> model,
                                   double t_fixed, const TriangularGrid& grid,
                                   std::shared_ptr<const PathEnsemble> ensemble,
                                   const RegressionBasis& basis,
                                   const BsvieSolverOptions& options = {});

/// Cross-validation of the Monte Carlo solution against the PDE field via
/// the representation Y = u(t,s,X(s)), Z = u_x(t,s,X(s)) sigma(s).
/// Errors are measured over all triangle nodes and the stored path
/// subsample; diagonal errors over all paths.  Samples falling outside the
/// spatial grid are excluded and their fraction reported (throws if > 1%).
struct CrossValidationReport {
    double rms_y = 0, max_y = 0;
    double rms_z = 0, max_z = 0;
    double rms_yd = 0, max_yd = 0;
    double rms_zd = 0, max_zd = 0;
    double outside_fraction = 0;
    std::size_t samples = 0;
    std::string summary() const;
};

CrossValidationReport feynman_kac_check(const MarkovianModel& model,
                                        const TwoTimeField& pde_field,
                                        const BsvieSolution& mc_solution,
                                        const SpatialGrid& space);

} // namespace volterra
