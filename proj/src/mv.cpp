#include "volterra/mv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "volterra/parallel.hpp"
#include "volterra/rng.hpp"

namespace volterra {

StateModel build_state_model(const StateModelSpec& spec) {
    using Kind = StateModelSpec::Kind;
    StateModel out;
    out.x0 = spec.r0;
    out.to_r = [](double u) { return u; };

    MarkovianModel& m = out.forward;
    m.state_dim = m.sol_dim = m.noise_dim = 1;

    switch (spec.kind) {
    case Kind::HoLee: {
        // F(R) = R, kappa = 0
        const double theta = spec.theta, sig = spec.sigma_R;
        m.drift = [theta](double, const Eigen::Ref<const VectorXd>&) {
            return VectorXd::Constant(1, theta);
        };
        m.drift_jacobian = [](double, const Eigen::Ref<const VectorXd>&) {
            return MatrixXd::Zero(1, 1);
        };
        m.diffusion = [sig](double) { return MatrixXd::Constant(1, 1, sig); };
        break;
    }
    case Kind::HullWhite:
    case Kind::OUVasicek: {
        // F(R) = E(R) = R, kappa < 0 (mean reversion)
        if (spec.kappa >= 0.0)
            throw InvalidStateModel("Hull-White/OU state model requires kappa < 0");
        const double theta = spec.theta, kappa = spec.kappa, sig = spec.sigma_R;
        m.drift = [theta, kappa](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, theta + kappa * x[0]);
        };
        m.drift_jacobian = [kappa](double, const Eigen::Ref<const VectorXd>&) {
            return MatrixXd::Constant(1, 1, kappa);
        };
        m.diffusion = [sig](double) { return MatrixXd::Constant(1, 1, sig); };
        break;
    }
    case Kind::BrownianBridge: {
        if (spec.bridge_time <= 0.0)
            throw InvalidStateModel("Brownian bridge requires bridge_time > 0");
        const double a = spec.bridge_target, tb = spec.bridge_time, sig = spec.sigma_R;
        m.drift = [a, tb](double s, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, (a - x[0]) / (tb - s));
        };
        m.drift_jacobian = [tb](double s, const Eigen::Ref<const VectorXd>&) {
            return MatrixXd::Constant(1, 1, -1.0 / (tb - s));
        };
        m.diffusion = [sig](double) { return MatrixXd::Constant(1, 1, sig); };
        break;
    }
    case Kind::Bessel: {
        // E(R) = 1/R, kappa > 0, theta = 0; paths reflect at the floor
        if (spec.kappa <= 0.0)
            throw InvalidStateModel("Bessel state model requires kappa > 0");
        if (spec.bessel_floor <= 0.0)
            throw InvalidStateModel("Bessel state model requires a positive floor");
        if (spec.r0 <= 0.0)
            throw InvalidStateModel("Bessel state model requires r0 > 0");
        const double kappa = spec.kappa, sig = spec.sigma_R;
        m.drift = [kappa](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, kappa / x[0]);
        };
        m.drift_jacobian = [kappa](double, const Eigen::Ref<const VectorXd>& x) {
            return MatrixXd::Constant(1, 1, -kappa / (x[0] * x[0]));
        };
        m.diffusion = [sig](double) { return MatrixXd::Constant(1, 1, sig); };
        m.reflecting_floor = spec.bessel_floor;
        break;
    }
    case Kind::Custom: {
        if (!spec.theta_fn || !spec.kappa_fn || !spec.sigma_fn || !spec.E_map ||
            !spec.F_map || !spec.F_inv || !spec.custom_drift_jacobian)
            throw InvalidStateModel("custom state model requires all callables");
        const auto theta = spec.theta_fn;
        const auto kappa = spec.kappa_fn;
        const auto sig = spec.sigma_fn;
        const auto emap = spec.E_map;
        const auto finv = spec.F_inv;
        const auto jac = spec.custom_drift_jacobian;
        // simulate u = F(R); diffusion stays state-independent in u
        m.drift = [theta, kappa, emap, finv](double s,
                                             const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, theta(s) + kappa(s) * emap(finv(x[0])));
        };
        m.drift_jacobian = [jac](double s, const Eigen::Ref<const VectorXd>& x) {
            return MatrixXd::Constant(1, 1, jac(s, x[0]));
        };
        m.diffusion = [sig](double s) { return MatrixXd::Constant(1, 1, sig(s)); };
        out.to_r = finv;
        out.x0 = spec.F_map(spec.r0);
        break;
    }
    }

    // the backward pieces are owned by the MV solver, not the state SDE
    m.generator = [](double, double, const Eigen::Ref<const VectorXd>&,
                     const Eigen::Ref<const VectorXd>&,
                     const Eigen::Ref<const MatrixXd>&,
                     const Eigen::Ref<const VectorXd>&,
                     const Eigen::Ref<const MatrixXd>&,
                     Eigen::Ref<VectorXd> g) { g.setZero(); };
    m.terminal = [](double, const Eigen::Ref<const VectorXd>&) {
        return VectorXd::Zero(1);
    };
    return out;
}

void validate_mv_model(const MVModel& mv, const TriangularGrid& grid) {
    if (mv.gamma <= 0.0) throw ConfigError("MVModel: gamma must be positive");
    if (mv.rho_corr < -1.0 || mv.rho_corr > 1.0)
        throw ConfigError("MVModel: correlation outside [-1, 1]");
    if (!mv.rho_fn || !mv.rho_deriv || !mv.beta || !mv.sigma)
        throw ConfigError("MVModel: rho, rho', beta, sigma are required");
    if (mv.state_model.kind == StateModelSpec::Kind::BrownianBridge &&
        mv.state_model.bridge_time <= grid.horizon())
        throw InvalidStateModel("Brownian bridge time must exceed the horizon");

    // sigma floor on grid times x state probes around r0
    const double r0 = mv.state_model.r0;
    for (int n = 0; n <= grid.steps(); ++n)
        for (double dr : {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0}) {
            const double sig = mv.sigma(grid.time(n), r0 + dr);
            if (!(sig >= mv.sigma_floor))
                throw SigmaFloorBreach("MVModel: sigma below floor at probe point");
        }

    // rho' consistency by finite differences at 10 sampled points
    CounterRng rng(20240601u, 7u);
    const double h = 1e-6 * std::max(1.0, grid.horizon());
    for (int i = 0; i < 10; ++i) {
        const double t = rng.uniform() * grid.horizon();
        const double fd = (mv.rho_fn(t + h) - mv.rho_fn(t - h)) / (2.0 * h);
        if (std::abs(fd - mv.rho_deriv(t)) > 1e-4 * (1.0 + std::abs(fd)))
            throw ConfigError("MVModel: rho_deriv inconsistent with rho_fn");
    }
}

MVSolution solve_mv_system(const MVModel& mv, const TriangularGrid& grid,
                           std::size_t n_paths, std::uint64_t seed,
                           const RegressionBasis& basis,
                           const MVSolverOptions& options) {
    validate_mv_model(mv, grid);
    StateModel state = build_state_model(mv.state_model);
    {
        std::vector<VectorXd> probes{VectorXd::Constant(1, state.x0)};
        ensure_valid(state.forward, grid, probes);
    }
    auto ensemble = std::make_shared<const PathEnsemble>(
        simulate_paths(state.forward, 0.0, VectorXd::Constant(1, state.x0), grid,
                       n_paths, seed, options.threads));

    const int N = grid.steps();
    const double dt = grid.dt();
    const double T = grid.horizon();
    const std::size_t J = n_paths;
    const std::size_t S = std::min(options.store_paths, J);

    MVSolution sol;
    sol.grid_ = grid;
    sol.ensemble_ = ensemble;
    sol.to_r_ = state.to_r;
    sol.paths_ = J;
    sol.stored_ = S;
    sol.pd_.assign(static_cast<std::size_t>(N + 1) * J, 0.0);
    sol.qd_.assign(static_cast<std::size_t>(N + 1) * J, 0.0);
    sol.m_.assign(static_cast<std::size_t>(N + 1) * J, 0.0);
    sol.n_.assign(static_cast<std::size_t>(N + 1) * J, 0.0);
    sol.psub_.assign(grid.node_count() * S, 0.0);
    sol.qsub_.assign(grid.node_count() * S, 0.0);
    sol.pd_co_.assign(N + 1, Eigen::VectorXd());
    sol.qd_co_.assign(N + 1, Eigen::VectorXd());
    sol.m_co_.assign(N + 1, Eigen::VectorXd());
    sol.se_q_.assign(N + 1, 0.0);
    sol.se_n_.assign(N + 1, 0.0);
    sol.level_basis_.assign(N + 1, BasisEvaluator());

    // terminal: P(t, T) = rho(t) deterministic, Q(t, T) = 0 (the terminal
    // datum carries no state risk), M(T) = 0, N(T) = 0
    const double rhoT = mv.rho_fn(T);
    for (std::size_t j = 0; j < J; ++j) sol.pd_[sol.idx(N, j)] = rhoT;
    for (int m = 0; m <= N; ++m) {
        const double rho_m = mv.rho_fn(grid.time(m));
        for (std::size_t j = 0; j < S; ++j)
            sol.psub_[grid.node_index(m, N) * S + j] = rho_m;
    }

    std::vector<double> pnext(static_cast<std::size_t>(N + 1) * J);
    std::vector<double> pcur(static_cast<std::size_t>(N + 1) * J);
    for (int m = 0; m <= N; ++m) {
        const double rho_m = mv.rho_fn(grid.time(m));
        std::fill(pnext.begin() + static_cast<std::size_t>(m) * J,
                  pnext.begin() + static_cast<std::size_t>(m + 1) * J, rho_m);
    }

    std::vector<double> pdp(J), qdp(J), mhat(J), drift(J), target(J), pcont(J), qrow(J);

    for (int n = N - 1; n >= 0; --n) {
        const double s_n = grid.time(n);
        const double* xn = ensemble->state_level(n);
        const double* dw = ensemble->increment_level(n);
        const double nvol = state.forward.diffusion(s_n)(0, 0);
        LevelRegression reg(basis, xn, J, 1, options.threads);
        sol.level_basis_[n] = reg.evaluator();

        reg.fit_predict(sol.pd_.data() + static_cast<std::size_t>(n + 1) * J, 1,
                        pdp.data(), 1);
        reg.fit_predict(sol.qd_.data() + static_cast<std::size_t>(n + 1) * J, 1,
                        qdp.data(), 1);
        reg.fit_predict(sol.m_.data() + static_cast<std::size_t>(n + 1) * J, 1,
                        mhat.data(), 1);
        // N line from the continuation-residual control variate
        double tsum = 0, tsq = 0;
        for (std::size_t j = 0; j < J; ++j) {
            target[j] = (sol.m_[sol.idx(n + 1, j)] - mhat[j]) * dw[j] / dt;
            tsum += target[j];
            tsq += target[j] * target[j];
        }
        reg.fit_predict(target.data(), 1, sol.n_.data() + sol.idx(n, 0), 1);
        const double tmean_n = tsum / J;
        sol.se_n_[n] = std::sqrt(std::max(0.0, tsq / J - tmean_n * tmean_n) / J);

        // shared generator of the (P, Q) triangle and the (M, N) line
        std::atomic<bool> floor_breach{false};
        parallel_blocks(J, kParallelBlock, options.threads,
                        [&](std::size_t begin, std::size_t end) {
            for (std::size_t j = begin; j < end; ++j) {
                const double r = state.to_r(xn[j]);
                const double beta = mv.beta(s_n, r);
                const double sigma = mv.sigma(s_n, r);
                if (!(sigma >= mv.sigma_floor)) {
                    floor_breach.store(true);
                    return;
                }
                drift[j] = -(beta / (mv.gamma * sigma * sigma)) *
                           (beta * pdp[j] + mv.rho_corr * nvol * sigma * qdp[j] +
                            mv.gamma * beta * mhat[j]);
            }
        });
        if (floor_breach.load())
            throw SigmaFloorBreach("solve_mv_system: sigma(s, R) below floor on a path");

        for (std::size_t j = 0; j < J; ++j)
            sol.m_[sol.idx(n, j)] = mhat[j] - dt * drift[j];

        for (int m = 0; m <= n; ++m) {
            const double* prow = pnext.data() + static_cast<std::size_t>(m) * J;
            reg.fit_predict(prow, 1, pcont.data(), 1);
            double qsum = 0, qsq = 0;
            for (std::size_t j = 0; j < J; ++j) {
                target[j] = (prow[j] - pcont[j]) * dw[j] / dt;
                qsum += target[j];
                qsq += target[j] * target[j];
            }
            reg.fit_predict(target.data(), 1, qrow.data(), 1);
            double* pout = pcur.data() + static_cast<std::size_t>(m) * J;
            for (std::size_t j = 0; j < J; ++j) pout[j] = pcont[j] - dt * drift[j];

            for (std::size_t j = 0; j < S; ++j) {
                sol.psub_[grid.node_index(m, n) * S + j] = pout[j];
                sol.qsub_[grid.node_index(m, n) * S + j] = qrow[j];
            }
            if (m == n) {
                std::copy(pout, pout + J, sol.pd_.data() + sol.idx(n, 0));
                std::copy(qrow.begin(), qrow.end(), sol.qd_.data() + sol.idx(n, 0));
                const double qmean = qsum / J;
                sol.se_q_[n] =
                    std::sqrt(std::max(0.0, qsq / J - qmean * qmean) / J);
            }
        }

        sol.pd_co_[n] = reg.fit(sol.pd_.data() + sol.idx(n, 0), 1);
        sol.qd_co_[n] = reg.fit(sol.qd_.data() + sol.idx(n, 0), 1);
        sol.m_co_[n] = reg.fit(sol.m_.data() + sol.idx(n, 0), 1);

        for (std::size_t j = 0; j < J; ++j)
            if (!std::isfinite(sol.pd_[sol.idx(n, j)]) ||
                !std::isfinite(sol.m_[sol.idx(n, j)]))
                throw NonFiniteSolution("solve_mv_system: non-finite value at level " +
                                        std::to_string(n));
        std::swap(pnext, pcur);
    }
    return sol;
}

double MVSolution::p_diag_at(int n, double r) const {
    if (n == grid_.steps()) return pd_[idx(n, 0)];
    const double x = r;  // named kinds simulate R itself; custom callers map first
    return level_basis_[n].evaluate(pd_co_[n], &x);
}

double MVSolution::q_diag_at(int n, double r) const {
    if (n == grid_.steps()) return 0.0;
    const double x = r;
    return level_basis_[n].evaluate(qd_co_[n], &x);
}

double MVSolution::m_line_at(int n, double r) const {
    if (n == grid_.steps()) return 0.0;
    const double x = r;
    return level_basis_[n].evaluate(m_co_[n], &x);
}

double MVSolution::state_quantile(int n, double q) const {
    std::vector<double> vals(paths_);
    for (std::size_t j = 0; j < paths_; ++j) vals[j] = state_r(n, j);
    const std::size_t pos = static_cast<std::size_t>(
        std::min<double>(paths_ - 1, std::max(0.0, q * (paths_ - 1))));
    std::nth_element(vals.begin(), vals.begin() + pos, vals.end());
    return vals[pos];
}

namespace {

PolicyDecomposition make_policy(const MVModel& mv, double s, double T, double r,
                                double p, double q, double mline) {
    const double disc = std::exp(mv.r_f * (T - s));
    const double beta = mv.beta(s, r);
    const double sigma = mv.sigma(s, r);
    StateModel state = build_state_model(mv.state_model);
    const double nvol = state.forward.diffusion(s)(0, 0);
    PolicyDecomposition out;
    out.myopic = beta / (mv.gamma * sigma * sigma) * (p + mv.gamma * mline) * disc;
    out.hedging = mv.rho_corr * nvol / (mv.gamma * sigma) * q * disc;
    out.total = out.myopic + out.hedging;
    return out;
}

} // namespace

PolicyDecomposition equilibrium_policy(const MVSolution& solution, const MVModel& mv,
                                       int n, double r) {
    return make_policy(mv, solution.grid().time(n), solution.grid().horizon(), r,
                       solution.p_diag_at(n, r), solution.q_diag_at(n, r),
                       solution.m_line_at(n, r));
}

PolicyDecomposition equilibrium_policy(const MVSolution& solution, const MVModel& mv,
                                       int n, std::size_t path) {
    const double r = solution.state_r(n, path);
    return make_policy(mv, solution.grid().time(n), solution.grid().horizon(), r,
                       solution.p_diag(n, path), solution.q_diag(n, path),
                       solution.m_line(n, path));
}

ConstantCoefficientOracle constant_coefficient_oracle(const MVModel& mv, int steps) {
    const double T = mv.horizon;
    const double beta = mv.beta(0.0, mv.state_model.r0);
    const double sigma = mv.sigma(0.0, mv.state_model.r0);
    const double theta = beta * beta / (sigma * sigma);
    const double gamma = mv.gamma;

    ConstantCoefficientOracle oracle;
    oracle.s.resize(steps + 1);
    oracle.p.resize(steps + 1);
    oracle.m.resize(steps + 1);
    const double h = T / steps;
    for (int i = 0; i <= steps; ++i) oracle.s[i] = i * h;

    auto fp = [&](double s, double p, double m) {
        return mv.rho_deriv(s) - (theta / gamma) * p - theta * m;
    };
    auto fm = [&](double, double p, double m) {
        return -(theta / gamma) * p - theta * m;
    };

    double p = mv.rho_fn(T), m = 0.0;
    oracle.p[steps] = p;
    oracle.m[steps] = m;
    for (int i = steps; i > 0; --i) {
        const double s = oracle.s[i];
        // RK4 with negative step
        const double k1p = fp(s, p, m), k1m = fm(s, p, m);
        const double k2p = fp(s - h / 2, p - h / 2 * k1p, m - h / 2 * k1m);
        const double k2m = fm(s - h / 2, p - h / 2 * k1p, m - h / 2 * k1m);
        const double k3p = fp(s - h / 2, p - h / 2 * k2p, m - h / 2 * k2m);
        const double k3m = fm(s - h / 2, p - h / 2 * k2p, m - h / 2 * k2m);
        const double k4p = fp(s - h, p - h * k3p, m - h * k3m);
        const double k4m = fm(s - h, p - h * k3p, m - h * k3m);
        p -= h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p);
        m -= h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m);
        oracle.p[i - 1] = p;
        oracle.m[i - 1] = m;
    }
    return oracle;
}

namespace {

double interp(const std::vector<double>& s, const std::vector<double>& v, double t) {
    if (t <= s.front()) return v.front();
    if (t >= s.back()) return v.back();
    const double h = s[1] - s[0];
    const std::size_t i = std::min(s.size() - 2, static_cast<std::size_t>(t / h));
    const double w = (t - s[i]) / h;
    return (1.0 - w) * v[i] + w * v[i + 1];
}

} // namespace

double ConstantCoefficientOracle::p_at(double time) const { return interp(s, p, time); }
double ConstantCoefficientOracle::m_at(double time) const { return interp(s, m, time); }

void export_policy_csv(const MVSolution& solution, const MVModel& mv,
                       const std::string& path, const std::vector<double>& quantiles) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_policy_csv: cannot open " + path);
    out << "n,s,r_quantile,r,myopic,hedging,total\n";
    char buf[192];
    for (int n = 0; n <= solution.grid().steps(); ++n) {
        for (double q : quantiles) {
            const double r = solution.state_quantile(n, q);
            const PolicyDecomposition pol = equilibrium_policy(solution, mv, n, r);
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          n, solution.grid().time(n), q, r, pol.myopic, pol.hedging,
                          pol.total);
            out << buf;
        }
    }
}

} // namespace volterra
