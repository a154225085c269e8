#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "volterra/bsvie.hpp"
#include "volterra/pde.hpp"

using namespace volterra;

namespace {

// scalar state driven by two Brownian motions
std::shared_ptr<MarkovianModel> two_noise_model() {
    auto m = std::make_shared<MarkovianModel>();
    m->state_dim = 1;
    m->sol_dim = 1;
    m->noise_dim = 2;
    m->drift = [](double, const Eigen::Ref<const VectorXd>&) {
        return VectorXd::Zero(1);
    };
    m->drift_jacobian = [](double, const Eigen::Ref<const VectorXd>&) {
        return MatrixXd::Zero(1, 1);
    };
    m->diffusion = [](double) {
        MatrixXd s(1, 2);
        s << 0.8, 0.6;
        return s;
    };
    m->generator = [](double, double, const Eigen::Ref<const VectorXd>&,
                      const Eigen::Ref<const VectorXd>&,
                      const Eigen::Ref<const MatrixXd>&,
                      const Eigen::Ref<const VectorXd>&,
                      const Eigen::Ref<const MatrixXd>&,
                      Eigen::Ref<VectorXd> g) { g.setZero(); };
    m->generator_t = m->generator;
    m->terminal = [](double, const Eigen::Ref<const VectorXd>& x) {
        return VectorXd::Constant(1, x[0]);
    };
    m->terminal_t = [](double, const Eigen::Ref<const VectorXd>&) {
        return VectorXd::Zero(1);
    };
    return m;
}

// two-component solution coupled through the diagonal of the second
std::shared_ptr<MarkovianModel> coupled_k2_model() {
    auto m = std::make_shared<MarkovianModel>();
    m->state_dim = 1;
    m->sol_dim = 2;
    m->noise_dim = 1;
    m->drift = [](double, const Eigen::Ref<const VectorXd>&) {
        return VectorXd::Zero(1);
    };
    m->drift_jacobian = [](double, const Eigen::Ref<const VectorXd>&) {
        return MatrixXd::Zero(1, 1);
    };
    m->diffusion = [](double) { return MatrixXd::Constant(1, 1, 1.0); };
    // dY_1 = -Y_2(s,s) ds + ..., dY_2 = 0: Y_2 = 1, Y_1(t,s) = 1 + (T-s)
    m->generator = [](double, double, const Eigen::Ref<const VectorXd>&,
                      const Eigen::Ref<const VectorXd>&,
                      const Eigen::Ref<const MatrixXd>&,
                      const Eigen::Ref<const VectorXd>& yd,
                      const Eigen::Ref<const MatrixXd>&,
                      Eigen::Ref<VectorXd> g) {
        g[0] = -yd[1];
        g[1] = 0.0;
    };
    m->generator_t = [](double, double, const Eigen::Ref<const VectorXd>&,
                        const Eigen::Ref<const VectorXd>&,
                        const Eigen::Ref<const MatrixXd>&,
                        const Eigen::Ref<const VectorXd>&,
                        const Eigen::Ref<const MatrixXd>&,
                        Eigen::Ref<VectorXd> g) { g.setZero(); };
    m->terminal = [](double, const Eigen::Ref<const VectorXd>&) {
        return VectorXd::Ones(2);
    };
    m->terminal_t = [](double, const Eigen::Ref<const VectorXd>&) {
        return VectorXd::Zero(2);
    };
    return m;
}

// two-dimensional rotating drift: the Jacobians fail to commute across time
std::shared_ptr<MarkovianModel> planar_model() {
    auto m = std::make_shared<MarkovianModel>();
    m->state_dim = 2;
    m->sol_dim = 1;
    m->noise_dim = 2;
    m->drift = [](double s, const Eigen::Ref<const VectorXd>& x) {
        VectorXd b(2);
        b[0] = -x[0] + s * x[1];
        b[1] = -0.5 * x[1];
        return b;
    };
    m->drift_jacobian = [](double s, const Eigen::Ref<const VectorXd>&) {
        MatrixXd j(2, 2);
        j << -1.0, s, 0.0, -0.5;
        return j;
    };
    m->diffusion = [](double) {
        MatrixXd s(2, 2);
        s << 0.7, 0.1, 0.0, 0.5;
        return s;
    };
    m->generator = [](double, double, const Eigen::Ref<const VectorXd>&,
                      const Eigen::Ref<const VectorXd>&,
                      const Eigen::Ref<const MatrixXd>&,
                      const Eigen::Ref<const VectorXd>&,
                      const Eigen::Ref<const MatrixXd>&,
                      Eigen::Ref<VectorXd> g) { g.setZero(); };
    m->terminal = [](double, const Eigen::Ref<const VectorXd>& x) {
        return VectorXd::Constant(1, x[0] + x[1]);
    };
    return m;
}

} // namespace

TEST_CASE("two noise sources: Z recovers both diffusion loadings") {
    auto model = two_noise_model();
    TriangularGrid grid(1.0, 16);
    auto ens = std::make_shared<const PathEnsemble>(
        simulate_paths(*model, 0.0, VectorXd::Zero(1), grid, 20000, 31));
    const BsvieSolution sol = solve_bsvie_mc(model, grid, ens, {});
    double worst0 = 0, worst1 = 0;
    for (int n = 0; n < 16; ++n) {
        double s0 = 0, s1 = 0;
        for (std::size_t j = 0; j < sol.paths(); ++j) {
            s0 += sol.zd(n, j, 0, 0);
            s1 += sol.zd(n, j, 0, 1);
        }
        worst0 = std::max(worst0, std::abs(s0 / sol.paths() - 0.8));
        worst1 = std::max(worst1, std::abs(s1 / sol.paths() - 0.6));
    }
    CHECK(worst0 <= 0.03);
    CHECK(worst1 <= 0.03);
}

TEST_CASE("coupled two-component system solves against the closed form") {
    auto model = coupled_k2_model();
    TriangularGrid grid(1.0, 20);
    auto ens = std::make_shared<const PathEnsemble>(
        simulate_paths(*model, 0.0, VectorXd::Zero(1), grid, 8000, 37));
    const BsvieSolution sol = solve_bsvie_mc(model, grid, ens, {});
    double worst = 0;
    for (int n = 0; n <= 20; ++n) {
        double m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < sol.paths(); ++j) {
            m1 += sol.yd(n, j, 0);
            m2 += sol.yd(n, j, 1);
        }
        worst = std::max(worst, std::abs(m1 / sol.paths() -
                                         (1.0 + (1.0 - grid.time(n)))));
        worst = std::max(worst, std::abs(m2 / sol.paths() - 1.0));
    }
    CHECK(worst <= 0.02);
}

TEST_CASE("coupled two-component system: PDE route matches the closed form") {
    auto model = coupled_k2_model();
    TriangularGrid grid(1.0, 20);
    SpatialGrid space(-3.0, 3.0, 24);
    PDESolverConfig conf;
    const auto fields = solve_nonlocal_pde_system(*model, grid, space, conf);
    REQUIRE(fields.size() == 2);
    for (int n = 20; n >= 0; --n)
        for (int m = 0; m <= n; ++m)
            for (int i = 0; i <= 24; ++i) {
                CHECK(fields[0].value(m, n, i) ==
                      doctest::Approx(1.0 + (1.0 - grid.time(n))).epsilon(1e-10));
                CHECK(fields[1].value(m, n, i) == doctest::Approx(1.0));
            }
}

TEST_CASE("planar state: tangent ODE against the initial-condition bump") {
    auto model = planar_model();
    TriangularGrid grid(1.0, 200);
    VectorXd x0(2);
    x0 << 1.0, -0.5;
    auto ens = std::make_shared<const PathEnsemble>(
        simulate_paths(*model, 0.0, x0, grid, 8, 41));
    const TangentField tf = tangent_process(*model, *ens);
    const double eps = 1e-5;
    for (int col = 0; col < 2; ++col) {
        VectorXd bumped_x0 = x0;
        bumped_x0[col] += eps;
        PathEnsemble bumped = simulate_paths(*model, 0.0, bumped_x0, grid, 8, 41);
        for (std::size_t j = 0; j < 8; ++j)
            for (int row = 0; row < 2; ++row) {
                const double fd =
                    (bumped.state(200, j)[row] - ens->state(200, j)[row]) / eps;
                CHECK(fd == doctest::Approx(tf.value(200, j)(row, col))
                                .epsilon(0.02)
                                .scale(1.0));
            }
    }
}

TEST_CASE("planar state: Malliavin derivative against the Brownian bump") {
    auto model = planar_model();
    TriangularGrid grid(1.0, 100);
    VectorXd x0(2);
    x0 << 0.3, 0.2;
    auto ens = std::make_shared<const PathEnsemble>(
        simulate_paths(*model, 0.0, x0, grid, 4, 43));
    const int theta = 20, s = 70;
    const auto dx = malliavin_derivative_x(*model, *ens, theta, s);
    const double eps = 1e-5;
    for (std::size_t j = 0; j < 4; ++j)
        for (int w = 0; w < 2; ++w) {
            const auto bumped = bump_repropagate(*model, *ens, j, theta, w, eps);
            for (int row = 0; row < 2; ++row) {
                const double fd =
                    (bumped[static_cast<std::size_t>(s) * 2 + row] -
                     ens->state(s, j)[row]) /
                    eps;
                CHECK(fd == doctest::Approx(dx[j](row, w)).epsilon(0.03).scale(1.0));
            }
        }
}
