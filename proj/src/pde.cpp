#include "volterra/pde.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "volterra/parallel.hpp"

namespace volterra {

namespace {

// second-order gradient of one spatial row
void grad_row(const double* u, int points, double dx, double* out) {
    const int last = points - 1;
    if (points < 3) {
        for (int i = 0; i < points; ++i) out[i] = 0.0;
        return;
    }
    out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx);
    for (int i = 1; i < last; ++i) out[i] = (u[i + 1] - u[i - 1]) / (2.0 * dx);
    out[last] = (3.0 * u[last] - 4.0 * u[last - 1] + u[last - 2]) / (2.0 * dx);
}

// Tridiagonal factorization/solve for (1+2r) on the diagonal, -r off it,
// over the interior unknowns; boundary values enter through the rhs.
struct Tridiag {
    double r = 0.0;
    std::vector<double> cp;  // modified super-diagonal

    void factor(int unknowns, double r_in) {
        r = r_in;
        cp.assign(unknowns, 0.0);
        const double b = 1.0 + 2.0 * r;
        double denom = b;
        cp[0] = -r / denom;
        for (int i = 1; i < unknowns; ++i) {
            denom = b + r * cp[i - 1];
            cp[i] = -r / denom;
        }
    }

    // solves in place; rhs has `unknowns` entries
    void solve(std::vector<double>& rhs) const {
        const int n = static_cast<int>(rhs.size());
        const double b = 1.0 + 2.0 * r;
        rhs[0] /= b;
        for (int i = 1; i < n; ++i)
            rhs[i] = (rhs[i] + r * rhs[i - 1]) / (b + r * cp[i - 1]);
        for (int i = n - 2; i >= 0; --i) rhs[i] -= cp[i] * rhs[i + 1];
    }
};

struct LevelContext {
    const MarkovianModel* model;
    const TriangularGrid* grid;
    const SpatialGrid* space;
    const PDESolverConfig* config;
    double s_data;   // time carried by the data level n+1
    double a_data;   // (sigma sigma^T)(s_data), scalar (d = 1)
    MatrixXd sigma_data;  // 1 x n_w
    const std::vector<std::vector<double>>* diag_val;   // [k][points]
    const std::vector<std::vector<double>>* diag_grad;  // [k][points]
    const Tridiag* tri;
};

// Advances one (m, n) row of all k components from level n+1 data.
// data[c] points at u_c[m][n+1][.]; out[c] at u_c[m][n][.].
//
// Boundary handling under LinearExtrapolation: the two boundary nodes march
// the PDE with the diffusion term dropped (u_xx = 0 there), one-sided
// convection and the full generator.  The semi-implicit interior solve then
// consumes them as Dirichlet data.  Globally linear fields are reproduced
// exactly; data with curvature at the truncation boundary keeps its error in
// a boundary layer.
void step_row(const LevelContext& ctx, double t_m,
              const std::vector<const double*>& data,
              const std::vector<double*>& out) {
    const int k = ctx.model->sol_dim;
    const int nw = ctx.model->noise_dim;
    const int points = ctx.space->points();
    const int last = points - 1;
    const double dx = ctx.space->dx();
    const double dt = ctx.grid->dt();
    const bool implicit =
        ctx.config->scheme == PDESolverConfig::Scheme::SemiImplicitDiffusion;
    const bool frozen =
        ctx.config->boundary == PDESolverConfig::Boundary::FrozenTerminal;

    VectorXd xv(1), y(k), yd(k), gval(k);
    MatrixXd z(k, nw), zd(k, nw);
    std::vector<std::vector<double>> rhs(k, std::vector<double>(points - 2));

    for (int i = 1; i < last; ++i) {
        const double x = ctx.space->x(i);
        xv[0] = x;
        double d1[8], d2[8];
        for (int c = 0; c < k; ++c) {
            const double* u = data[c];
            d1[c] = (u[i + 1] - u[i - 1]) / (2.0 * dx);
            d2[c] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
            y[c] = u[i];
            yd[c] = (*ctx.diag_val)[c][i];
            for (int w = 0; w < nw; ++w) {
                z(c, w) = d1[c] * ctx.sigma_data(0, w);
                zd(c, w) = (*ctx.diag_grad)[c][i] * ctx.sigma_data(0, w);
            }
        }
        ctx.model->generator(t_m, ctx.s_data, xv, y, z, yd, zd, gval);
        const double b = ctx.model->drift(ctx.s_data, xv)[0];
        for (int c = 0; c < k; ++c) {
            const double convection = b * d1[c];
            if (implicit) {
                rhs[c][i - 1] = data[c][i] + dt * convection - dt * gval[c];
            } else {
                out[c][i] = data[c][i] +
                            dt * (0.5 * ctx.a_data * d2[c] + convection) -
                            dt * gval[c];
            }
        }
    }

    if (frozen) {
        VectorXd xb(1);
        xb[0] = ctx.space->x_lo();
        const VectorXd hlo = ctx.model->terminal(t_m, xb);
        xb[0] = ctx.space->x_hi();
        const VectorXd hhi = ctx.model->terminal(t_m, xb);
        for (int c = 0; c < k; ++c) {
            out[c][0] = hlo[c];
            out[c][last] = hhi[c];
        }
    } else {
        // march boundary nodes with u_xx = 0
        for (const int i : {0, last}) {
            const double x = ctx.space->x(i);
            xv[0] = x;
            double d1[8];
            for (int c = 0; c < k; ++c) {
                const double* u = data[c];
                d1[c] = (i == 0)
                            ? (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx)
                            : (3.0 * u[last] - 4.0 * u[last - 1] + u[last - 2]) / (2.0 * dx);
                y[c] = u[i];
                yd[c] = (*ctx.diag_val)[c][i];
                for (int w = 0; w < nw; ++w) {
                    z(c, w) = d1[c] * ctx.sigma_data(0, w);
                    zd(c, w) = (*ctx.diag_grad)[c][i] * ctx.sigma_data(0, w);
                }
            }
            ctx.model->generator(t_m, ctx.s_data, xv, y, z, yd, zd, gval);
            const double b = ctx.model->drift(ctx.s_data, xv)[0];
            for (int c = 0; c < k; ++c)
                out[c][i] = data[c][i] + dt * (b * d1[c] - gval[c]);
        }
    }

    if (implicit) {
        const double r = ctx.tri->r;
        for (int c = 0; c < k; ++c) {
            rhs[c][0] += r * out[c][0];
            rhs[c][points - 3] += r * out[c][last];
            ctx.tri->solve(rhs[c]);
            for (int i = 1; i < last; ++i) out[c][i] = rhs[c][i - 1];
        }
    }
}

double max_diffusion(const MarkovianModel& model, const TriangularGrid& grid) {
    double a_max = 0.0;
    for (int n = 0; n <= grid.steps(); ++n) {
        const MatrixXd sigma = model.diffusion(grid.time(n));
        a_max = std::max(a_max, (sigma * sigma.transpose())(0, 0));
    }
    return a_max;
}

} // namespace

double TwoTimeField::interpolate(int m, int n, double x) const {
    const double* u = level(m, n);
    const double dx = space_.dx();
    if (x <= space_.x_lo()) return u[0];
    if (x >= space_.x_hi()) return u[space_.cells()];
    const double pos = (x - space_.x_lo()) / dx;
    int i = static_cast<int>(pos);
    if (i >= space_.cells()) i = space_.cells() - 1;
    const double w = pos - i;
    return (1.0 - w) * u[i] + w * u[i + 1];
}

std::vector<TwoTimeField> solve_nonlocal_pde_system(const MarkovianModel& model,
                                                    const TriangularGrid& grid,
                                                    const SpatialGrid& space,
                                                    const PDESolverConfig& config) {
    if (model.state_dim != 1)
        throw DimensionMismatch("solve_nonlocal_pde: finite differences require d = 1");
    if (model.sol_dim > 8)
        throw DimensionMismatch("solve_nonlocal_pde: k > 8 not supported");
    const int k = model.sol_dim;
    const int N = grid.steps();
    const int points = space.points();
    const double dt = grid.dt();
    const double dx = space.dx();

    if (config.scheme == PDESolverConfig::Scheme::Explicit) {
        const double a_max = max_diffusion(model, grid);
        if (a_max > 0.0 && dt > config.cfl_safety * dx * dx / a_max)
            throw CflViolation("explicit scheme requires dt <= cfl_safety*dx^2/max sigma^2");
    }

    std::vector<TwoTimeField> u(k, TwoTimeField(grid, space));

    // terminal data u(t, T, x) = h(t, x), exact at every m
    {
        VectorXd xv(1);
        for (int m = 0; m <= N; ++m) {
            for (int i = 0; i < points; ++i) {
                xv[0] = space.x(i);
                const VectorXd h = model.terminal(grid.time(m), xv);
                for (int c = 0; c < k; ++c) u[c].value(m, N, i) = h[c];
            }
        }
    }

    std::vector<std::vector<double>> diag_val(k, std::vector<double>(points));
    std::vector<std::vector<double>> diag_grad(k, std::vector<double>(points));
    Tridiag tri;

    for (int n = N - 1; n >= 0; --n) {
        const double s_data = grid.time(n + 1);
        const MatrixXd sigma_data = model.diffusion(s_data);
        const double a_data = (sigma_data * sigma_data.transpose())(0, 0);

        LevelContext ctx;
        ctx.model = &model;
        ctx.grid = &grid;
        ctx.space = &space;
        ctx.config = &config;
        ctx.s_data = s_data;
        ctx.a_data = a_data;
        ctx.sigma_data = sigma_data;
        ctx.diag_val = &diag_val;
        ctx.diag_grad = &diag_grad;
        ctx.tri = &tri;

        if (config.scheme == PDESolverConfig::Scheme::SemiImplicitDiffusion) {
            const MatrixXd sigma_new = model.diffusion(grid.time(n));
            const double a_new = (sigma_new * sigma_new.transpose())(0, 0);
            tri.factor(points - 2, dt * 0.5 * a_new / (dx * dx));
        }

        for (int sweep = 0; sweep <= config.diagonal_sweeps; ++sweep) {
            // nonlocal arguments: level n+1 diagonal on the first pass,
            // the freshly computed level n diagonal on refinement sweeps
            const int diag_level = (sweep == 0) ? n + 1 : n;
            for (int c = 0; c < k; ++c) {
                const double* dsl = u[c].level(diag_level, diag_level);
                for (int i = 0; i < points; ++i) diag_val[c][i] = dsl[i];
                grad_row(dsl, points, dx, diag_grad[c].data());
            }

            parallel_blocks(static_cast<std::size_t>(n) + 1, 1, config.threads,
                            [&](std::size_t begin, std::size_t end) {
                std::vector<const double*> data(k);
                std::vector<double*> out(k);
                for (std::size_t mm = begin; mm < end; ++mm) {
                    const int m = static_cast<int>(mm);
                    for (int c = 0; c < k; ++c) {
                        data[c] = u[c].level(m, n + 1);
                        out[c] = u[c].level(m, n);
                    }
                    step_row(ctx, grid.time(m), data, out);
                }
            });
        }

        for (int c = 0; c < k; ++c)
            for (int m = 0; m <= n; ++m) {
                const double* row = u[c].level(m, n);
                for (int i = 0; i < points; ++i)
                    if (!std::isfinite(row[i]))
                        throw NonFiniteField("solve_nonlocal_pde: blow-up at level " +
                                             std::to_string(n));
            }
    }
    return u;
}

TwoTimeField solve_nonlocal_pde(const MarkovianModel& model,
                                const TriangularGrid& grid,
                                const SpatialGrid& space,
                                const PDESolverConfig& config) {
    if (model.sol_dim != 1)
        throw DimensionMismatch("solve_nonlocal_pde: k = 1 required (use the system variant)");
    return std::move(solve_nonlocal_pde_system(model, grid, space, config).front());
}

std::vector<std::vector<double>> diagonal_slice(const TwoTimeField& field) {
    const int N = field.grid().steps();
    const int points = field.space().points();
    std::vector<std::vector<double>> v(N + 1, std::vector<double>(points));
    for (int n = 0; n <= N; ++n) {
        const double* row = field.level(n, n);
        for (int i = 0; i < points; ++i) v[n][i] = row[i];
    }
    return v;
}

TwoTimeField gradient_x(const TwoTimeField& field, const SpatialGrid& space) {
    TwoTimeField out(field.grid(), space);
    const int N = field.grid().steps();
    const int points = space.points();
    for (int n = N; n >= 0; --n)
        for (int m = 0; m <= n; ++m)
            grad_row(field.level(m, n), points, space.dx(), out.level(m, n));
    return out;
}

std::vector<std::vector<double>> solve_semilinear_slice(
    const MarkovianModel& model, double t, const TriangularGrid& grid,
    const SpatialGrid& space, const PDESolverConfig& config) {
    if (model.state_dim != 1 || model.sol_dim != 1)
        throw DimensionMismatch("solve_semilinear_slice: d = k = 1 required");
    const int N = grid.steps();
    const int points = space.points();
    const double dt = grid.dt();
    const double dx = space.dx();

    if (config.scheme == PDESolverConfig::Scheme::Explicit) {
        const double a_max = max_diffusion(model, grid);
        if (a_max > 0.0 && dt > config.cfl_safety * dx * dx / a_max)
            throw CflViolation("explicit scheme requires dt <= cfl_safety*dx^2/max sigma^2");
    }

    std::vector<std::vector<double>> u(N + 1, std::vector<double>(points));
    VectorXd xv(1);
    for (int i = 0; i < points; ++i) {
        xv[0] = space.x(i);
        u[N][i] = model.terminal(t, xv)[0];
    }

    // placeholder diagonal arguments: a local semilinear equation never reads
    // them, and the arithmetic matches the nonlocal kernel exactly
    std::vector<std::vector<double>> zeros_val(1, std::vector<double>(points, 0.0));
    std::vector<std::vector<double>> zeros_grad(1, std::vector<double>(points, 0.0));
    Tridiag tri;

    for (int n = N - 1; n >= 0; --n) {
        const double s_data = grid.time(n + 1);
        const MatrixXd sigma_data = model.diffusion(s_data);

        LevelContext ctx;
        ctx.model = &model;
        ctx.grid = &grid;
        ctx.space = &space;
        ctx.config = &config;
        ctx.s_data = s_data;
        ctx.a_data = (sigma_data * sigma_data.transpose())(0, 0);
        ctx.sigma_data = sigma_data;
        ctx.diag_val = &zeros_val;
        ctx.diag_grad = &zeros_grad;
        ctx.tri = &tri;

        if (config.scheme == PDESolverConfig::Scheme::SemiImplicitDiffusion) {
            const MatrixXd sigma_new = model.diffusion(grid.time(n));
            const double a_new = (sigma_new * sigma_new.transpose())(0, 0);
            tri.factor(points - 2, dt * 0.5 * a_new / (dx * dx));
        }

        std::vector<const double*> data{u[n + 1].data()};
        std::vector<double*> out{u[n].data()};
        step_row(ctx, t, data, out);
    }
    return u;
}

void export_field_csv(const TwoTimeField& field, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_field_csv: cannot open " + path);
    const TwoTimeField grad = gradient_x(field, field.space());
    out << "m,n,t,s,i,x,u,u_x\n";
    char buf[192];
    const int N = field.grid().steps();
    for (int n = N; n >= 0; --n)
        for (int m = 0; m <= n; ++m)
            for (int i = 0; i < field.space().points(); ++i) {
                std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%d,%.17g,%.17g,%.17g\n",
                              m, n, field.grid().time(m), field.grid().time(n), i,
                              field.space().x(i), field.value(m, n, i),
                              grad.value(m, n, i));
                out << buf;
            }
}

} // namespace volterra
