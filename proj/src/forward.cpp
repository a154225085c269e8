#include "volterra/forward.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "volterra/parallel.hpp"
#include "volterra/rng.hpp"

namespace volterra {

PathEnsemble::PathEnsemble(TriangularGrid grid, int state_dim, int noise_dim,
                           std::size_t n_paths, double t0, VectorXd x0,
                           std::uint64_t seed)
    : grid_(grid), d_(state_dim), nw_(noise_dim), paths_(n_paths), t0_(t0),
      x0_(std::move(x0)), seed_(seed) {
    const int N = grid_.steps();
    t0_index_ = -1;
    for (int n = 0; n <= N; ++n) {
        if (std::abs(grid_.time(n) - t0_) <= 1e-12 * std::max(1.0, grid_.horizon())) {
            t0_index_ = n;
            break;
        }
    }
    if (t0_index_ < 0)
        throw GridMismatch("PathEnsemble: t0 does not coincide with a grid node");
    level_stride_ = paths_ * static_cast<std::size_t>(d_);
    inc_stride_ = paths_ * static_cast<std::size_t>(nw_);
    states_.assign(level_stride_ * (N + 1), 0.0);
    increments_.assign(inc_stride_ * N, 0.0);
}

PathEnsemble simulate_paths(const MarkovianModel& model, double t0,
                            const VectorXd& x0, const TriangularGrid& grid,
                            std::size_t n_paths, std::uint64_t seed, int threads) {
    if (x0.size() != model.state_dim)
        throw DimensionMismatch("simulate_paths: x0 dimension != state_dim");
    PathEnsemble ens(grid, model.state_dim, model.noise_dim, n_paths, t0, x0, seed);

    const int N = grid.steps();
    const int d = model.state_dim;
    const int nw = model.noise_dim;
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const int n0 = ens.t0_index();

    // sigma depends on time only; evaluate once per level.
    std::vector<MatrixXd> sigma(N);
    for (int n = 0; n < N; ++n) sigma[n] = model.diffusion(grid.time(n));

    std::atomic<bool> non_finite{false};
    parallel_blocks(n_paths, kParallelBlock, threads,
                    [&](std::size_t begin, std::size_t end) {
        VectorXd x(d), b(d), dw(nw);
        for (std::size_t j = begin; j < end; ++j) {
            CounterRng rng(seed, j);
            // draw the full increment sequence for path j
            for (int n = 0; n < N; ++n) {
                double* inc = ens.increment_level(n) + j * nw;
                for (int w = 0; w < nw; ++w) inc[w] = sqrt_dt * rng.normal();
            }
            x = ens.x0();
            for (int n = 0; n <= N; ++n) {
                double* st = ens.state_level(n) + j * d;
                for (int i = 0; i < d; ++i) st[i] = x[i];
                if (n == N) break;
                if (n < n0) continue;  // nodes before t0 hold x0
                const double s = grid.time(n);
                b = model.drift(s, x);
                const double* inc = ens.increment_level(n) + j * nw;
                for (int w = 0; w < nw; ++w) dw[w] = inc[w];
                x += b * dt;
                x.noalias() += sigma[n] * dw;
                if (model.reflecting_floor && d == 1 && x[0] < *model.reflecting_floor)
                    x[0] = 2.0 * *model.reflecting_floor - x[0];
                if (!x.allFinite()) {
                    non_finite.store(true);
                    return;
                }
            }
        }
    });
    if (non_finite.load())
        throw NonFiniteState("simulate_paths: path produced NaN/inf (exploding drift?)");
    return ens;
}

TangentField::TangentField(TriangularGrid grid, int d, std::size_t n_paths)
    : grid_(grid), d_(d), paths_(n_paths),
      data_(static_cast<std::size_t>(grid.steps() + 1) * n_paths * d * d, 0.0) {}

TangentField tangent_process(const MarkovianModel& model,
                             const PathEnsemble& ensemble, int threads) {
    const TriangularGrid& grid = ensemble.grid();
    const int N = grid.steps();
    const int d = model.state_dim;
    const double dt = grid.dt();
    const int n0 = ensemble.t0_index();
    TangentField field(grid, d, ensemble.paths());

    parallel_blocks(ensemble.paths(), kParallelBlock, threads,
                    [&](std::size_t begin, std::size_t end) {
        if (d == 1) {
            for (std::size_t j = begin; j < end; ++j) {
                double integral = 0.0;  // Euler sum of b_x over [t0, s_n)
                for (int n = 0; n <= N; ++n) {
                    field.value(n, j)(0, 0) = std::exp(integral);
                    if (n == N) break;
                    if (n < n0) continue;
                    const double s = grid.time(n);
                    integral += model.drift_jacobian(s, ensemble.state(n, j))(0, 0) * dt;
                }
            }
        } else {
            MatrixXd grad(d, d);
            for (std::size_t j = begin; j < end; ++j) {
                grad.setIdentity();
                for (int n = 0; n <= N; ++n) {
                    field.value(n, j) = grad;
                    if (n == N) break;
                    if (n < n0) continue;
                    const double s = grid.time(n);
                    const MatrixXd bx = model.drift_jacobian(s, ensemble.state(n, j));
                    grad += dt * (bx * grad);
                }
            }
        }
    });
    return field;
}

std::vector<MatrixXd> malliavin_derivative_x(const MarkovianModel& model,
                                             const PathEnsemble& ensemble,
                                             const TangentField& tangent,
                                             int theta_index, int s_index) {
    const int d = model.state_dim;
    const int nw = model.noise_dim;
    std::vector<MatrixXd> out(ensemble.paths());
    if (theta_index > s_index) {
        for (auto& m : out) m = MatrixXd::Zero(d, nw);
        return out;
    }
    const MatrixXd sigma = model.diffusion(ensemble.grid().time(theta_index));
    for (std::size_t j = 0; j < ensemble.paths(); ++j) {
        if (d == 1) {
            const double g_theta = tangent.value(theta_index, j)(0, 0);
            if (std::abs(g_theta) < 1e-300)
                throw SingularTangent("malliavin_derivative_x: tangent underflow");
            out[j] = (tangent.value(s_index, j)(0, 0) / g_theta) * sigma;
        } else {
            Eigen::PartialPivLU<MatrixXd> lu(tangent.value(theta_index, j));
            if (lu.rcond() < 1e-12)
                throw SingularTangent(
                    "malliavin_derivative_x: grad X(theta) numerically singular");
            out[j] = tangent.value(s_index, j) * lu.solve(sigma);
        }
    }
    return out;
}

std::vector<MatrixXd> malliavin_derivative_x(const MarkovianModel& model,
                                             const PathEnsemble& ensemble,
                                             int theta_index, int s_index) {
    const TangentField tangent = tangent_process(model, ensemble);
    return malliavin_derivative_x(model, ensemble, tangent, theta_index, s_index);
}

std::vector<double> bump_repropagate(const MarkovianModel& model,
                                     const PathEnsemble& ensemble, std::size_t j,
                                     int theta_index, int component, double eps) {
    const TriangularGrid& grid = ensemble.grid();
    const int N = grid.steps();
    const int d = model.state_dim;
    const int nw = model.noise_dim;
    const double dt = grid.dt();
    const int n0 = ensemble.t0_index();

    std::vector<double> out(static_cast<std::size_t>(N + 1) * d);
    VectorXd x = ensemble.x0();
    VectorXd dw(nw);
    for (int n = 0; n <= N; ++n) {
        for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(n) * d + i] = x[i];
        if (n == N) break;
        if (n < n0) continue;
        const double s = grid.time(n);
        const VectorXd b = model.drift(s, x);
        dw = ensemble.increment(n, j);
        if (n == theta_index) dw[component] += eps;
        x += b * dt + model.diffusion(s) * dw;
        if (model.reflecting_floor && d == 1 && x[0] < *model.reflecting_floor)
            x[0] = 2.0 * *model.reflecting_floor - x[0];
    }
    return out;
}

void dump_ensemble_csv(const PathEnsemble& ensemble, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dump_ensemble_csv: cannot open " + path);
    out << "path,n,s";
    for (int i = 1; i <= ensemble.state_dim(); ++i) out << ",x_" << i;
    out << "\n";
    char buf[32];
    for (std::size_t j = 0; j < ensemble.paths(); ++j) {
        for (int n = 0; n <= ensemble.grid().steps(); ++n) {
            out << j << "," << n;
            std::snprintf(buf, sizeof(buf), ",%.17g", ensemble.grid().time(n));
            out << buf;
            for (int i = 0; i < ensemble.state_dim(); ++i) {
                std::snprintf(buf, sizeof(buf), ",%.17g", ensemble.state(n, j)[i]);
                out << buf;
            }
            out << "\n";
        }
    }
}

} // namespace volterra
