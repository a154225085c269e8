#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "volterra/bsvie.hpp"

namespace volterra {

/// State-variable dynamics dF(R) = (theta(s) + kappa(s) E(R))ds + sigma_R dB.
/// Named kinds fix (F, E, sign of kappa); Custom simulates in F-coordinates
/// (keeping the diffusion state-independent) and maps back through F^{-1}.
struct StateModelSpec {
    enum class Kind { HoLee, HullWhite, OUVasicek, BrownianBridge, Bessel, Custom };
    Kind kind = Kind::HullWhite;
    double r0 = 0.0;

    double theta = 0.0;
    double kappa = -1.0;
    double sigma_R = 0.3;

    double bridge_target = 0.0;  // BrownianBridge pull (target - R)/(bridge_time - s)
    double bridge_time = 2.0;    // must exceed the solve horizon
    double bessel_floor = 1e-3;  // reflecting floor r_min > 0

    // Custom: coefficients in F-coordinates plus the mappings
    std::function<double(double)> theta_fn, kappa_fn, sigma_fn;
    std::function<double(double)> E_map, F_map, F_inv;
    std::function<double(double, double)> custom_drift_jacobian;  // d(drift)/du at (s, u)
};

struct StateModel {
    MarkovianModel forward;              // dynamics of the simulated coordinate
    std::function<double(double)> to_r;  // simulated coordinate -> R
    double x0 = 0.0;                     // initial simulated coordinate
};

/// Instantiates the forward model for R.  Throws InvalidStateModel on a
/// parameter set outside the catalog (e.g. Hull-White with kappa >= 0).
StateModel build_state_model(const StateModelSpec& spec);

/// Dynamic mean-variance market: objective weights, stock coefficients
/// beta(s,r) (excess return) and sigma(s,r) (volatility), correlation
/// rho_corr between the stock and state Brownian motions, and the state
/// model.  The state volatility n(s) is the state model's diffusion.
struct MVModel {
    double gamma = 2.0;      // risk aversion > 0
    double r_f = 0.0;        // risk-free rate
    double rho_corr = 0.0;   // correlation in [-1, 1]
    std::function<double(double)> rho_fn;     // time-preference weight rho(t)
    std::function<double(double)> rho_deriv;  // rho'(t), user-supplied
    std::function<double(double, double)> beta;
    std::function<double(double, double)> sigma;
    StateModelSpec state_model;
    double horizon = 1.0;
    double sigma_floor = 1e-6;
};

/// Spot-checks: sigma above the floor on grid x state probes, rho'
/// consistent with a finite difference of rho at 10 sampled points (1e-4).
void validate_mv_model(const MVModel& mv, const TriangularGrid& grid);

struct MVSolverOptions {
    std::size_t store_paths = 4096;
    int threads = 1;
};

/// Solution of the decoupled mean-variance FBSVIE: the (P, Q) triangle and
/// the (M, N) line solved jointly on one ensemble of the state variable.
/// Diagonals p(s) = P(s,s), q(s) = Q(s,s) are kept for all paths; the
/// triangle for a stored subsample; per-level regressions of the diagonals
/// give smooth evaluators in the state variable.
class MVSolution {
public:
    const TriangularGrid& grid() const { return grid_; }
    std::size_t paths() const { return paths_; }
    std::size_t stored_paths() const { return stored_; }
    const std::shared_ptr<const PathEnsemble>& ensemble() const { return ensemble_; }
    double state_r(int n, std::size_t j) const { return to_r_(ensemble_->scalar_state(n, j)); }

    double p_diag(int n, std::size_t j) const { return pd_[idx(n, j)]; }
    double q_diag(int n, std::size_t j) const { return qd_[idx(n, j)]; }
    double m_line(int n, std::size_t j) const { return m_[idx(n, j)]; }
    double n_line(int n, std::size_t j) const { return n_[idx(n, j)]; }

    double p_stored(int m, int n, std::size_t j) const {
        return psub_[grid_.node_index(m, n) * stored_ + j];
    }
    double q_stored(int m, int n, std::size_t j) const {
        return qsub_[grid_.node_index(m, n) * stored_ + j];
    }

    /// Regressed-state evaluators (functions of r at level n).
    double p_diag_at(int n, double r) const;
    double q_diag_at(int n, double r) const;
    double m_line_at(int n, double r) const;

    /// Empirical quantile of the state variable R at level n.
    double state_quantile(int n, double q) const;

    /// Standard error of the path mean of the diagonal Q / the N line at
    /// level n, from the raw martingale-increment targets.
    double q_mean_se(int n) const { return se_q_[n]; }
    double n_mean_se(int n) const { return se_n_[n]; }

private:
    friend MVSolution solve_mv_system(const MVModel&, const TriangularGrid&,
                                      std::size_t, std::uint64_t,
                                      const RegressionBasis&, const MVSolverOptions&);
    std::size_t idx(int n, std::size_t j) const {
        return static_cast<std::size_t>(n) * paths_ + j;
    }
    TriangularGrid grid_{1.0, 1};
    std::shared_ptr<const PathEnsemble> ensemble_;
    std::function<double(double)> to_r_;
    std::size_t paths_ = 0;
    std::size_t stored_ = 0;
    std::vector<double> pd_, qd_, m_, n_;  // (N+1) x J
    std::vector<double> psub_, qsub_;      // nodes x S
    std::vector<double> se_q_, se_n_;      // per level
    std::vector<Eigen::VectorXd> pd_co_, qd_co_, m_co_;
    std::vector<BasisEvaluator> level_basis_;
};

/// Backward regression solve of the system
///   dP(t,s) = G(s) ds + Q(t,s) dB,  P(t,T) = rho(t),
///   dM(s)  = G(s) ds + N(s) dB,    M(T) = 0,
///   G = -(beta/(gamma sigma^2)) (beta P(s,s) + corr (n sigma) Q(s,s)
///        + gamma beta M(s)),
/// with the lagged diagonals and the current-level regressed M in G.
/// Throws SigmaFloorBreach if sigma(s, R_j(s)) drops below the floor.
MVSolution solve_mv_system(const MVModel& mv, const TriangularGrid& grid,
                           std::size_t n_paths, std::uint64_t seed,
                           const RegressionBasis& basis,
                           const MVSolverOptions& options = {});

/// Equilibrium policy components at (s_n, r); wealth never enters.
struct PolicyDecomposition {
    double myopic = 0.0;
    double hedging = 0.0;
    double total = 0.0;
};

PolicyDecomposition equilibrium_policy(const MVSolution& solution, const MVModel& mv,
                                       int n, double r);
PolicyDecomposition equilibrium_policy(const MVSolution& solution, const MVModel& mv,
                                       int n, std::size_t path);

/// Deterministic reduction for state-independent beta, sigma: RK4 backward
/// integration of
///   p'(s) = rho'(s) - (theta/gamma) p(s) - theta M(s),  p(T) = rho(T),
///   M'(s) = -(theta/gamma) p(s) - theta M(s),           M(T) = 0,
/// with theta = beta^2/sigma^2.  steps should be >= 10x the MC grid.
struct ConstantCoefficientOracle {
    std::vector<double> s;  // fine grid, ascending
    std::vector<double> p;
    std::vector<double> m;
    double p_at(double time) const;
    double m_at(double time) const;
};

ConstantCoefficientOracle constant_coefficient_oracle(const MVModel& mv, int steps);

/// Policy report: CSV columns (n, s, r_quantile, myopic, hedging, total).
void export_policy_csv(const MVSolution& solution, const MVModel& mv,
                       const std::string& path,
                       const std::vector<double>& quantiles = {0.1, 0.5, 0.9});

} // namespace volterra
