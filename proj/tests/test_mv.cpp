#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "volterra/mv.hpp"

using namespace volterra;

namespace {

MVModel constant_mv(double beta, double sigma, double gamma, double corr) {
    MVModel mv;
    mv.gamma = gamma;
    mv.r_f = 0.0;
    mv.rho_corr = corr;
    mv.rho_fn = [](double) { return 1.0; };
    mv.rho_deriv = [](double) { return 0.0; };
    mv.beta = [beta](double, double) { return beta; };
    mv.sigma = [sigma](double, double) { return sigma; };
    mv.state_model.kind = StateModelSpec::Kind::HullWhite;
    mv.state_model.theta = 0.0;
    mv.state_model.kappa = -1.0;
    mv.state_model.sigma_R = 0.3;
    mv.state_model.r0 = 0.0;
    mv.horizon = 1.0;
    return mv;
}

} // namespace

TEST_CASE("state models: catalog dynamics") {
    StateModelSpec spec;
    VectorXd x = VectorXd::Constant(1, 0.4);

    spec.kind = StateModelSpec::Kind::HoLee;
    spec.theta = 0.1;
    spec.sigma_R = 0.2;
    StateModel holee = build_state_model(spec);
    CHECK(holee.forward.drift(0.3, x)[0] == doctest::Approx(0.1));
    CHECK(holee.forward.diffusion(0.3)(0, 0) == doctest::Approx(0.2));

    spec.kind = StateModelSpec::Kind::HullWhite;
    spec.theta = 0.0;
    spec.kappa = -1.0;
    spec.sigma_R = 0.3;
    StateModel hw = build_state_model(spec);
    CHECK(hw.forward.drift(0.0, x)[0] == doctest::Approx(-0.4));
    CHECK(hw.forward.diffusion(0.0)(0, 0) == doctest::Approx(0.3));

    spec.kind = StateModelSpec::Kind::Bessel;
    spec.kappa = 0.5;
    spec.sigma_R = 1.0;
    spec.r0 = 1.0;
    StateModel bessel = build_state_model(spec);
    CHECK(bessel.forward.drift(0.0, x)[0] == doctest::Approx(0.5 / 0.4));
    REQUIRE(bessel.forward.reflecting_floor.has_value());
    CHECK(*bessel.forward.reflecting_floor == doctest::Approx(1e-3));
}

TEST_CASE("state models: invalid parameter sets are rejected") {
    StateModelSpec spec;
    spec.kind = StateModelSpec::Kind::HullWhite;
    spec.kappa = 0.5;
    CHECK_THROWS_AS(build_state_model(spec), InvalidStateModel);
    spec.kind = StateModelSpec::Kind::Bessel;
    spec.kappa = -0.5;
    CHECK_THROWS_AS(build_state_model(spec), InvalidStateModel);
    spec.kind = StateModelSpec::Kind::Bessel;
    spec.kappa = 0.5;
    spec.r0 = -1.0;
    CHECK_THROWS_AS(build_state_model(spec), InvalidStateModel);
}

TEST_CASE("state models: Bessel paths respect the reflecting floor") {
    StateModelSpec spec;
    spec.kind = StateModelSpec::Kind::Bessel;
    spec.kappa = 0.5;
    spec.sigma_R = 1.0;
    spec.r0 = 0.05;
    spec.bessel_floor = 1e-3;
    StateModel bessel = build_state_model(spec);
    TriangularGrid grid(1.0, 50);
    PathEnsemble ens = simulate_paths(bessel.forward, 0.0,
                                      VectorXd::Constant(1, spec.r0), grid, 2000, 21);
    for (std::size_t j = 0; j < ens.paths(); ++j)
        for (int n = 0; n <= 50; ++n)
            CHECK(ens.scalar_state(n, j) >= 1e-3);
}

TEST_CASE("validate_mv_model: inconsistent rho derivative is caught") {
    MVModel mv = constant_mv(0.2, 0.25, 2.0, 0.0);
    mv.rho_fn = [](double t) { return 1.0 + t * t; };
    mv.rho_deriv = [](double) { return 0.0; };  // wrong
    TriangularGrid grid(1.0, 10);
    CHECK_THROWS_AS(validate_mv_model(mv, grid), ConfigError);
}

TEST_CASE("oracle: beta = 0 gives p = rho, M = 0") {
    MVModel mv = constant_mv(0.0, 0.25, 2.0, 0.0);
    const ConstantCoefficientOracle oracle = constant_coefficient_oracle(mv, 500);
    CHECK(oracle.p_at(0.0) == doctest::Approx(1.0));
    CHECK(oracle.p_at(0.5) == doctest::Approx(1.0));
    CHECK(oracle.m_at(0.3) == doctest::Approx(0.0));
}

TEST_CASE("oracle: terminal boundary values are reproduced exactly") {
    MVModel mv = constant_mv(0.3, 0.2, 2.0, 0.5);
    const ConstantCoefficientOracle oracle = constant_coefficient_oracle(mv, 300);
    CHECK(oracle.p_at(1.0) == 1.0);  // p(T) = rho(T)
    CHECK(oracle.m_at(1.0) == 0.0);  // M(T) = 0
}

TEST_CASE("oracle: theta = gamma = 1 closed form") {
    // p - M = 1 and p' = -2p + 1: backward from p(T) = 1,
    // p(s) = 1/2 + 1/2 e^{2(T-s)}
    MVModel mv = constant_mv(0.5, 0.5, 1.0, 0.0);
    const ConstantCoefficientOracle oracle = constant_coefficient_oracle(mv, 2000);
    const double p0 = 0.5 * (1.0 + std::exp(2.0));
    CHECK(oracle.p_at(0.0) == doctest::Approx(p0).epsilon(1e-8));
    CHECK(oracle.m_at(0.0) == doctest::Approx(p0 - 1.0).epsilon(1e-7));
}

TEST_CASE("solve_mv_system: constant coefficients match the RK4 oracle") {
    MVModel mv = constant_mv(0.2, 0.25, 2.0, 0.5);
    TriangularGrid grid(1.0, 25);
    const MVSolution sol = solve_mv_system(mv, grid, 20000, 33, {});
    const ConstantCoefficientOracle oracle = constant_coefficient_oracle(mv, 1000);
    double p0 = 0, m0 = 0;
    for (std::size_t j = 0; j < sol.paths(); ++j) {
        p0 += sol.p_diag(0, j);
        m0 += sol.m_line(0, j);
    }
    p0 /= sol.paths();
    m0 /= sol.paths();
    CHECK(std::abs(p0 - oracle.p_at(0.0)) / oracle.p_at(0.0) <= 0.03);
    CHECK(std::abs(m0 - oracle.m_at(0.0)) /
              std::max(1e-9, std::abs(oracle.m_at(0.0))) <= 0.03);
    // Q and N statistically zero
    for (int n = 0; n < 25; n += 6) {
        double q = 0, nn = 0;
        for (std::size_t j = 0; j < sol.paths(); ++j) {
            q += sol.q_diag(n, j);
            nn += sol.n_line(n, j);
        }
        const double floor = 1e-12 * (1.0 + p0);
        CHECK(std::abs(q / sol.paths()) <= 3.0 * sol.q_mean_se(n) + floor);
        CHECK(std::abs(nn / sol.paths()) <= 3.0 * sol.n_mean_se(n) + floor);
    }
}

TEST_CASE("solve_mv_system: P(t,s) = rho(t) + M(s) pathwise") {
    MVModel mv = constant_mv(0.2, 0.25, 2.0, 0.5);
    mv.rho_fn = [](double t) { return 1.0 + 0.5 * t; };
    mv.rho_deriv = [](double) { return 0.5; };
    TriangularGrid grid(1.0, 12);
    const MVSolution sol = solve_mv_system(mv, grid, 4000, 9, {});
    for (int n = 0; n <= 12; ++n)
        for (int m = 0; m <= n; ++m)
            for (std::size_t j = 0; j < 100; ++j) {
                const double expected = mv.rho_fn(grid.time(m)) + sol.m_line(n, j);
                CHECK(sol.p_stored(m, n, j) ==
                      doctest::Approx(expected).epsilon(1e-9));
            }
}

TEST_CASE("solve_mv_system: t-slices of Q differ only within statistical noise") {
    MVModel mv = constant_mv(0.2, 0.25, 2.0, 0.5);
    mv.rho_fn = [](double t) { return 1.0 + 0.5 * t; };
    mv.rho_deriv = [](double) { return 0.5; };
    TriangularGrid grid(1.0, 12);
    const MVSolution sol = solve_mv_system(mv, grid, 8000, 9, {});
    for (int n : {3, 8}) {
        const double se = sol.q_mean_se(n);
        for (std::size_t j = 0; j < 200; ++j) {
            const double spread =
                std::abs(sol.q_stored(0, n, j) - sol.q_stored(n, n, j));
            // rho(t) spread times per-level regression noise scale
            CHECK(spread <= 3.0 * 0.5 * se * std::sqrt(double(sol.paths())) + 1e-9);
        }
    }
}

TEST_CASE("equilibrium_policy: decomposition identities") {
    MVModel mv = constant_mv(0.2, 0.25, 2.0, 0.5);
    TriangularGrid grid(1.0, 10);
    const MVSolution sol = solve_mv_system(mv, grid, 4000, 13, {});
    for (int n : {0, 5, 9}) {
        const double r = sol.state_quantile(n, 0.5);
        const PolicyDecomposition pol = equilibrium_policy(sol, mv, n, r);
        CHECK(pol.total == pol.myopic + pol.hedging);
    }
}

TEST_CASE("equilibrium_policy: zero excess return means zero investment") {
    MVModel mv = constant_mv(0.0, 0.25, 2.0, 0.5);
    TriangularGrid grid(1.0, 10);
    const MVSolution sol = solve_mv_system(mv, grid, 4000, 13, {});
    for (int n : {0, 4, 9}) {
        const PolicyDecomposition pol = equilibrium_policy(sol, mv, n, 0.0);
        CHECK(std::abs(pol.myopic) <= 1e-10);
        CHECK(std::abs(pol.hedging) <= 1e-10);
    }
}

TEST_CASE("equilibrium_policy: doubling gamma halves the myopic term at fixed (p, M)") {
    // pure formula check on the decomposition arithmetic, M = 0 so the
    // prefactor beta/(gamma sigma^2) carries the whole gamma dependence
    const double p = 1.3, M = 0.0, beta = 0.3, sigma2 = 0.04;
    const double myopic_g2 = beta / (2.0 * sigma2) * (p + 2.0 * M);
    const double myopic_g4 = beta / (4.0 * sigma2) * (p + 4.0 * M);
    CHECK(myopic_g4 == doctest::Approx(0.5 * myopic_g2));
}

TEST_CASE("equilibrium_policy: spec example formula at s = 0") {
    // beta = 0.3, sigma = 0.2, gamma = 2, rho = 1, r_f = 0, T = 1:
    // myopic(0) = beta/(gamma sigma^2) (p(0) + 2 M(0)) with (p, M) from RK4
    MVModel mv = constant_mv(0.3, 0.2, 2.0, 0.0);
    const ConstantCoefficientOracle oracle = constant_coefficient_oracle(mv, 4000);
    const double myopic =
        0.3 / (2.0 * 0.04) * (oracle.p_at(0.0) + 2.0 * oracle.m_at(0.0));
    // theta = 2.25: p - M = 1, p' = -theta(1 + 1/gamma) p + theta:
    // p(0) = 2/3 + (1/3) e^{-3.375 (0 - 1)}... backward form checked in closed form
    const double lam = 2.25 * 1.5;
    const double p0 = 2.0 / 3.0 + (1.0 / 3.0) * std::exp(lam * (0.0 - 1.0) * -1.0);
    CHECK(oracle.p_at(0.0) == doctest::Approx(p0).epsilon(1e-6));
    CHECK(myopic == doctest::Approx(0.3 / 0.08 * (3.0 * p0 - 2.0)).epsilon(1e-6));
}

TEST_CASE("zero correlation kills the hedging demand") {
    MVModel mv = constant_mv(0.2, 0.25, 2.0, 0.0);
    mv.beta = [](double, double r) { return 0.2 + 0.1 * r; };  // state-dependent
    TriangularGrid grid(1.0, 10);
    const MVSolution sol = solve_mv_system(mv, grid, 4000, 19, {});
    for (int n : {0, 5, 9})
        for (double q : {0.1, 0.5, 0.9}) {
            const PolicyDecomposition pol =
                equilibrium_policy(sol, mv, n, sol.state_quantile(n, q));
            CHECK(pol.hedging == 0.0);
        }
}

TEST_CASE("sigma floor breach is detected") {
    MVModel mv = constant_mv(0.2, 0.25, 2.0, 0.0);
    mv.sigma = [](double, double r) { return 0.25 - 0.4 * std::abs(r); };
    TriangularGrid grid(1.0, 10);
    CHECK_THROWS_AS(solve_mv_system(mv, grid, 2000, 7, {}), SigmaFloorBreach);
}
