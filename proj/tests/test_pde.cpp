#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "volterra/catalog.hpp"
#include "volterra/pde.hpp"

using namespace volterra;

namespace {

double max_error_vs(const TwoTimeField& field, const CatalogModel& cat,
                    double x_cut = 1e18) {
    double worst = 0;
    const TriangularGrid& grid = field.grid();
    const SpatialGrid& space = field.space();
    for (int n = grid.steps(); n >= 0; --n)
        for (int m = 0; m <= n; ++m)
            for (int i = 0; i < space.points(); ++i) {
                if (std::abs(space.x(i)) > x_cut) continue;
                worst = std::max(worst,
                                 std::abs(field.value(m, n, i) -
                                          cat.oracle_u(grid.time(m), grid.time(n),
                                                       space.x(i))));
            }
    return worst;
}

} // namespace

TEST_CASE("pde: linear terminal data is exact in both schemes") {
    auto cat = make_catalog_model("martingale", {}, 1.0);
    TriangularGrid grid(1.0, 20);
    SpatialGrid space(-4.0, 4.0, 32);
    for (auto scheme : {PDESolverConfig::Scheme::Explicit,
                        PDESolverConfig::Scheme::SemiImplicitDiffusion}) {
        PDESolverConfig conf;
        conf.scheme = scheme;
        const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
        CHECK(max_error_vs(u, cat) <= 1e-12);
    }
}

TEST_CASE("pde: heat-kernel second moment, interior error O(dt)") {
    // E[(x + B_{T-s})^2] = x^2 + (T - s); boundary truncation error stays in
    // a layer, so measure on the central half of a wide domain
    auto cat = make_catalog_model("quadratic", {}, 1.0);
    TriangularGrid grid(1.0, 25);
    SpatialGrid space(-6.0, 6.0, 56);
    PDESolverConfig conf;
    conf.scheme = PDESolverConfig::Scheme::Explicit;
    const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
    CHECK(max_error_vs(u, cat, 3.0) <= 5.0 * grid.dt());
}

TEST_CASE("pde: diag_z linear solution exact including the diagonal coupling") {
    auto cat = make_catalog_model("diag_z", {}, 1.0);
    TriangularGrid grid(1.0, 10);
    SpatialGrid space(-3.0, 3.0, 30);
    PDESolverConfig conf;
    const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
    CHECK(max_error_vs(u, cat) <= 1e-12);
}

TEST_CASE("pde: manufactured nonlocal solution is recovered") {
    auto cat = make_catalog_model("manufactured", {}, 1.0);
    TriangularGrid grid(1.0, 50);
    SpatialGrid space(-M_PI, M_PI, 29);
    PDESolverConfig conf;
    conf.scheme = PDESolverConfig::Scheme::Explicit;
    const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
    CHECK(max_error_vs(u, cat) <= 0.05);
}

TEST_CASE("pde: halving dt reduces the manufactured error by >= 1.7") {
    auto cat = make_catalog_model("manufactured", {}, 1.0);
    PDESolverConfig conf;
    conf.scheme = PDESolverConfig::Scheme::Explicit;
    // dx^2 scaled with dt (lambda fixed)
    TriangularGrid g1(1.0, 25), g2(1.0, 50);
    SpatialGrid s1(-M_PI, M_PI, 20), s2(-M_PI, M_PI, 29);
    const double e1 = max_error_vs(solve_nonlocal_pde(*cat.model, g1, s1, conf), cat);
    const double e2 = max_error_vs(solve_nonlocal_pde(*cat.model, g2, s2, conf), cat);
    CHECK(e1 / e2 >= 1.7);
}

TEST_CASE("pde: terminal row equals h(t_m, x_i) exactly") {
    auto cat = make_catalog_model("manufactured", {}, 1.0);
    TriangularGrid grid(1.0, 12);
    SpatialGrid space(-M_PI, M_PI, 24);
    PDESolverConfig conf;
    const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
    VectorXd xv(1);
    for (int m = 0; m <= 12; ++m)
        for (int i = 0; i <= 24; ++i) {
            xv[0] = space.x(i);
            CHECK(u.value(m, 12, i) == cat.model->terminal(grid.time(m), xv)[0]);
        }
}

TEST_CASE("pde: diagonal slice of t-linear solution is s_n * x") {
    auto cat = make_catalog_model("t_linear", {}, 1.0);
    TriangularGrid grid(1.0, 8);
    SpatialGrid space(-2.0, 2.0, 16);
    PDESolverConfig conf;
    const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
    const auto v = diagonal_slice(u);
    REQUIRE(v.size() == 9);
    for (int n = 0; n <= 8; ++n)
        for (int i = 0; i <= 16; ++i)
            CHECK(v[n][i] == doctest::Approx(grid.time(n) * space.x(i)).epsilon(1e-10));
}

TEST_CASE("pde: N = 1 triangle has two diagonal levels, top is terminal") {
    auto cat = make_catalog_model("martingale", {}, 1.0);
    TriangularGrid grid(1.0, 1);
    SpatialGrid space(-2.0, 2.0, 8);
    PDESolverConfig conf;
    const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
    const auto v = diagonal_slice(u);
    REQUIRE(v.size() == 2);
    for (int i = 0; i <= 8; ++i) CHECK(v[1][i] == doctest::Approx(space.x(i)));
}

TEST_CASE("gradient_x: exact on quadratics at interior nodes, zero on constants") {
    TriangularGrid grid(1.0, 4);
    SpatialGrid space(-1.0, 1.0, 20);
    TwoTimeField quad(grid, space), flat(grid, space);
    for (int n = 4; n >= 0; --n)
        for (int m = 0; m <= n; ++m)
            for (int i = 0; i <= 20; ++i) {
                quad.value(m, n, i) = space.x(i) * space.x(i);
                flat.value(m, n, i) = 7.0;
            }
    const TwoTimeField gq = gradient_x(quad, space);
    const TwoTimeField gf = gradient_x(flat, space);
    for (int i = 0; i <= 20; ++i) {
        CHECK(gq.value(0, 0, i) == doctest::Approx(2.0 * space.x(i)).epsilon(1e-12));
        CHECK(gf.value(0, 0, i) == doctest::Approx(0.0));
    }
}

TEST_CASE("gradient_x: sine within the Taylor remainder bound") {
    TriangularGrid grid(1.0, 2);
    SpatialGrid space(-2.0, 2.0, 50);
    TwoTimeField f(grid, space);
    for (int n = 2; n >= 0; --n)
        for (int m = 0; m <= n; ++m)
            for (int i = 0; i <= 50; ++i) f.value(m, n, i) = std::sin(space.x(i));
    const TwoTimeField g = gradient_x(f, space);
    const double bound = space.dx() * space.dx() / 6.0;  // max|u_xxx| = 1
    for (int i = 1; i < 50; ++i)
        CHECK(std::abs(g.value(0, 0, i) - std::cos(space.x(i))) <= bound * 1.01);
}

TEST_CASE("pde: comparison degeneracy against the local slice solver") {
    // g independent of the diagonals: the nonlocal march and the per-t local
    // solver share the kernel and must agree bit-exactly
    auto cat = make_catalog_model("quadratic", {}, 1.0);
    TriangularGrid grid(1.0, 10);
    SpatialGrid space(-3.0, 3.0, 24);
    PDESolverConfig conf;
    conf.scheme = PDESolverConfig::Scheme::SemiImplicitDiffusion;
    const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
    for (int m : {0, 3, 7}) {
        const auto slice =
            solve_semilinear_slice(*cat.model, grid.time(m), grid, space, conf);
        for (int n = m; n <= 10; ++n)
            for (int i = 0; i <= 24; ++i)
                CHECK(u.value(m, n, i) == slice[n][i]);
    }
}

TEST_CASE("pde: CFL violation is detected") {
    auto cat = make_catalog_model("martingale", {}, 1.0);
    TriangularGrid grid(1.0, 4);       // dt = 0.25
    SpatialGrid space(-2.0, 2.0, 40);  // dx = 0.1 -> dt >> dx^2
    PDESolverConfig conf;
    conf.scheme = PDESolverConfig::Scheme::Explicit;
    CHECK_THROWS_AS(solve_nonlocal_pde(*cat.model, grid, space, conf), CflViolation);
}

TEST_CASE("pde: inner diagonal sweeps stay consistent on the manufactured case") {
    auto cat = make_catalog_model("manufactured", {}, 1.0);
    TriangularGrid grid(1.0, 25);
    SpatialGrid space(-M_PI, M_PI, 20);
    PDESolverConfig conf;
    conf.scheme = PDESolverConfig::Scheme::Explicit;
    conf.diagonal_sweeps = 3;
    const TwoTimeField u = solve_nonlocal_pde(*cat.model, grid, space, conf);
    CHECK(max_error_vs(u, cat) <= 0.08);
}
