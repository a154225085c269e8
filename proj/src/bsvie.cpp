#include "volterra/bsvie.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "volterra/parallel.hpp"

namespace volterra {

namespace {

// evaluate a fitted polynomial at a slab of states (level-major, d per path)
void predict_at_states(const BasisEvaluator& eval, const Eigen::VectorXd& beta,
                       const double* states, std::size_t n_paths, int d,
                       double* out, std::size_t out_stride, int threads) {
    parallel_blocks(n_paths, kParallelBlock, threads,
                    [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j)
            out[j * out_stride] = eval.evaluate(beta, states + j * d);
    });
}

} // namespace

// ---------------------------------------------------------------------------
// engine
// ---------------------------------------------------------------------------

class BsvieEngine {
public:
    enum class DiagSource { Lagged, Frozen };

    BsvieEngine(std::shared_ptr<const MarkovianModel> model,
                const TriangularGrid& grid,
                std::shared_ptr<const PathEnsemble> ensemble,
                const RegressionBasis& basis, const BsvieSolverOptions& options)
        : model_(std::move(model)), grid_(grid), ensemble_(std::move(ensemble)),
          basis_(basis), opt_(options) {
        if (!grid_.same_shape(ensemble_->grid()))
            throw GridMismatch("solve_bsvie_mc: ensemble grid differs from solver grid");
        k_ = model_->sol_dim;
        nw_ = model_->noise_dim;
        d_ = model_->state_dim;
        J_ = ensemble_->paths();
        N_ = grid_.steps();
        dt_ = grid_.dt();
        S_ = std::min<std::size_t>(opt_.store_paths, J_);
    }

    // frozen: diagonal arrays consumed directly at each level (Picard mode)
    BsvieSolution run(DiagSource src, const std::vector<double>* frozen_yd,
                      const std::vector<double>* frozen_zd,
                      BsvieSolution::Kind kind) {
        BsvieSolution sol;
        sol.grid_ = grid_;
        sol.model_ = model_;
        sol.ensemble_ = ensemble_;
        sol.basis_ = basis_;
        sol.kind_ = kind;
        sol.k_ = k_;
        sol.nw_ = nw_;
        sol.paths_ = J_;
        sol.stored_ = S_;
        sol.implicit_y_sweeps_ = opt_.implicit_y_sweeps;
        sol.exact_eval_ = (src == DiagSource::Lagged &&
                           opt_.mode == BsvieSolverOptions::DiagonalMode::ExplicitLag);
        sol.yd_.assign(static_cast<std::size_t>(N_ + 1) * J_ * k_, 0.0);
        sol.zd_.assign(static_cast<std::size_t>(N_ + 1) * J_ * k_ * nw_, 0.0);
        sol.ysub_.assign(grid_.node_count() * S_ * k_, 0.0);
        sol.zsub_.assign(grid_.node_count() * S_ * k_ * nw_, 0.0);
        sol.ycont_co_.assign(grid_.node_count(), Eigen::MatrixXd());
        sol.z_co_.assign(grid_.node_count(), Eigen::MatrixXd());
        sol.ydp_co_.assign(N_ + 1, Eigen::MatrixXd());
        sol.zdp_co_.assign(N_ + 1, Eigen::MatrixXd());
        sol.level_basis_.assign(N_ + 1, BasisEvaluator());

        const std::size_t yrow = J_ * k_;        // one m-row of Y values
        const std::size_t zrow = J_ * k_ * nw_;  // one m-row of Z values
        std::vector<double> ynext(static_cast<std::size_t>(N_ + 1) * yrow);
        std::vector<double> ycur(static_cast<std::size_t>(N_ + 1) * yrow);
        std::vector<double> ycont(static_cast<std::size_t>(N_ + 1) * yrow);
        std::vector<double> zlev(static_cast<std::size_t>(N_ + 1) * zrow);
        std::vector<double> ydp(yrow), zdp(zrow);
        std::vector<double> target(J_);

        // ----- terminal level: Y(t_m, T) = h(t_m, X(T)) bit-exactly
        const double* xN = ensemble_->state_level(N_);
        parallel_blocks(J_, kParallelBlock, opt_.threads,
                        [&](std::size_t begin, std::size_t end) {
            for (std::size_t j = begin; j < end; ++j) {
                Eigen::Map<const VectorXd> x(xN + j * d_, d_);
                for (int m = 0; m <= N_; ++m) {
                    const VectorXd h = model_->terminal(grid_.time(m), x);
                    for (int c = 0; c < k_; ++c) ynext[m * yrow + j * k_ + c] = h[c];
                }
            }
        });
        for (int m = 0; m <= N_; ++m)
            for (std::size_t j = 0; j < S_; ++j)
                for (int c = 0; c < k_; ++c)
                    sol.ysub_[(grid_.node_index(m, N_) * S_ + j) * k_ + c] =
                        ynext[m * yrow + j * k_ + c];
        for (std::size_t j = 0; j < J_; ++j)
            for (int c = 0; c < k_; ++c)
                sol.yd_[(static_cast<std::size_t>(N_) * J_ + j) * k_ + c] =
                    ynext[static_cast<std::size_t>(N_) * yrow + j * k_ + c];

        // One-sided terminal Z: regress the residual of Y(t_m, T) against
        // dW_{N-1}/dt on the level N-1 basis, evaluate at X(T).  The backward
        // recursion never defines Z at s = T; this estimate is consistent to
        // O(dt) and feeds the first diagonal lag.
        {
            LevelRegression reg(basis_, ensemble_->state_level(N_ - 1), J_, d_,
                                opt_.threads);
            if (reg.used_ridge()) ++sol.ridge_count_;
            sol.level_basis_[N_] = reg.evaluator();
            const double* dw = ensemble_->increment_level(N_ - 1);
            std::vector<double> hhat(J_);
            for (int m = 0; m <= N_; ++m) {
                Eigen::MatrixXd zco(reg.cols(), k_ * nw_);
                for (int c = 0; c < k_; ++c) {
                    // continuation-residual control variate: same projection,
                    // variance independent of 1/dt
                    reg.fit_predict(ynext.data() + m * yrow + c, k_, hhat.data(), 1);
                    for (int w = 0; w < nw_; ++w) {
                        for (std::size_t j = 0; j < J_; ++j)
                            target[j] = (ynext[m * yrow + j * k_ + c] - hhat[j]) *
                                        dw[j * nw_ + w] / dt_;
                        const Eigen::VectorXd beta = reg.fit(target.data());
                        zco.col(c * nw_ + w) = beta;
                        predict_at_states(reg.evaluator(), beta, xN, J_, d_,
                                          zlev.data() + m * zrow + c * nw_ + w,
                                          k_ * nw_, opt_.threads);
                    }
                }
                sol.z_co_[grid_.node_index(m, N_)] = std::move(zco);
            }
            store_z_level(sol, N_, zlev);
            const double* zdiag = zlev.data() + static_cast<std::size_t>(N_) * zrow;
            std::copy(zdiag, zdiag + zrow,
                      sol.zd_.data() + static_cast<std::size_t>(N_) * zrow);
        }

        // ----- backward march
        for (int n = N_ - 1; n >= 0; --n) {
            const double s_n = grid_.time(n);
            const double* xn = ensemble_->state_level(n);
            const double* dw = ensemble_->increment_level(n);
            LevelRegression reg(basis_, xn, J_, d_, opt_.threads);
            if (reg.used_ridge()) ++sol.ridge_count_;
            sol.level_basis_[n] = reg.evaluator();

            // diagonal arguments consumed by the generator at this level
            if (src == DiagSource::Lagged) {
                Eigen::MatrixXd ydpc(reg.cols(), k_), zdpc(reg.cols(), k_ * nw_);
                const double* yd_next = sol.yd_.data() +
                                        static_cast<std::size_t>(n + 1) * J_ * k_;
                const double* zd_next = sol.zd_.data() +
                                        static_cast<std::size_t>(n + 1) * J_ * k_ * nw_;
                for (int c = 0; c < k_; ++c)
                    ydpc.col(c) = reg.fit_predict(yd_next + c, k_, ydp.data() + c, k_);
                for (int cw = 0; cw < k_ * nw_; ++cw)
                    zdpc.col(cw) =
                        reg.fit_predict(zd_next + cw, k_ * nw_, zdp.data() + cw, k_ * nw_);
                sol.ydp_co_[n] = std::move(ydpc);
                sol.zdp_co_[n] = std::move(zdpc);
            } else {
                const double* fy = frozen_yd->data() + static_cast<std::size_t>(n) * yrow;
                const double* fz = frozen_zd->data() + static_cast<std::size_t>(n) * zrow;
                std::copy(fy, fy + yrow, ydp.data());
                std::copy(fz, fz + zrow, zdp.data());
            }

            // regressions per m: continuation Y first, then the
            // martingale-increment Z with the continuation residual as a
            // control variate (same projection, variance independent of 1/dt)
            for (int m = 0; m <= n; ++m) {
                Eigen::MatrixXd yco(reg.cols(), k_);
                for (int c = 0; c < k_; ++c)
                    yco.col(c) = reg.fit_predict(ynext.data() + m * yrow + c, k_,
                                                 ycont.data() + m * yrow + c, k_);
                sol.ycont_co_[grid_.node_index(m, n)] = std::move(yco);

                Eigen::MatrixXd zco(reg.cols(), k_ * nw_);
                for (int c = 0; c < k_; ++c)
                    for (int w = 0; w < nw_; ++w) {
                        for (std::size_t j = 0; j < J_; ++j)
                            target[j] = (ynext[m * yrow + j * k_ + c] -
                                         ycont[m * yrow + j * k_ + c]) *
                                        dw[j * nw_ + w] / dt_;
                        zco.col(c * nw_ + w) = reg.fit_predict(
                            target.data(), 1,
                            zlev.data() + m * zrow + c * nw_ + w, k_ * nw_);
                    }
                sol.z_co_[grid_.node_index(m, n)] = std::move(zco);
            }

            const int sweeps = (opt_.mode == BsvieSolverOptions::DiagonalMode::PicardInner &&
                                src == DiagSource::Lagged)
                                   ? opt_.picard_inner_sweeps
                                   : 0;
            for (int sweep = 0; sweep <= sweeps; ++sweep) {
                if (sweep > 0) {
                    // refresh: consume the freshly computed level-n diagonal
                    const double* ydn = sol.yd_.data() + static_cast<std::size_t>(n) * yrow;
                    const double* zdn = sol.zd_.data() + static_cast<std::size_t>(n) * zrow;
                    std::copy(ydn, ydn + yrow, ydp.data());
                    std::copy(zdn, zdn + zrow, zdp.data());
                }
                for (int m = 0; m <= n; ++m) {
                    generator_update(grid_.time(m), s_n, xn, ycont.data() + m * yrow,
                                     zlev.data() + m * zrow, ydp.data(), zdp.data(),
                                     ycur.data() + m * yrow);
                    if (m == n) {
                        double* ydn = sol.yd_.data() + static_cast<std::size_t>(n) * yrow;
                        double* zdn = sol.zd_.data() + static_cast<std::size_t>(n) * zrow;
                        std::copy(ycur.data() + m * yrow, ycur.data() + (m + 1) * yrow, ydn);
                        std::copy(zlev.data() + m * zrow, zlev.data() + (m + 1) * zrow, zdn);
                    }
                }
            }

            for (int m = 0; m <= n; ++m)
                for (std::size_t j = 0; j < S_; ++j)
                    for (int c = 0; c < k_; ++c)
                        sol.ysub_[(grid_.node_index(m, n) * S_ + j) * k_ + c] =
                            ycur[m * yrow + j * k_ + c];
            store_z_level(sol, n, zlev);

            for (std::size_t i = 0; i < yrow; ++i)
                if (!std::isfinite(ycur[i]))
                    throw NonFiniteSolution("solve_bsvie_mc: non-finite Y at level " +
                                            std::to_string(n));
            std::swap(ynext, ycur);
        }
        return sol;
    }

    // derivative system: same recursion with the linearized drift
    BsvieSolution run_derivative(const BsvieSolution& base,
                                 const DerivativeOptions& dopt) {
        const MarkovianModel& model = *model_;
        if (!model.generator_t && !dopt.allow_finite_difference)
            throw MissingDerivativeCallables(
                "solve_derivative_bsvie: generator_t missing and FD fallback disabled");
        if (!model.terminal_t && !dopt.allow_finite_difference)
            throw MissingDerivativeCallables(
                "solve_derivative_bsvie: terminal_t missing and FD fallback disabled");

        BsvieSolution sol;
        sol.grid_ = grid_;
        sol.model_ = model_;
        sol.ensemble_ = ensemble_;
        sol.basis_ = basis_;
        sol.kind_ = BsvieSolution::Kind::Derivative;
        sol.k_ = k_;
        sol.nw_ = nw_;
        sol.paths_ = J_;
        sol.stored_ = S_;
        sol.yd_.assign(static_cast<std::size_t>(N_ + 1) * J_ * k_, 0.0);
        sol.zd_.assign(static_cast<std::size_t>(N_ + 1) * J_ * k_ * nw_, 0.0);
        sol.ysub_.assign(grid_.node_count() * S_ * k_, 0.0);
        sol.zsub_.assign(grid_.node_count() * S_ * k_ * nw_, 0.0);
        sol.ycont_co_.assign(grid_.node_count(), Eigen::MatrixXd());
        sol.z_co_.assign(grid_.node_count(), Eigen::MatrixXd());
        sol.ydp_co_.assign(N_ + 1, Eigen::MatrixXd());
        sol.zdp_co_.assign(N_ + 1, Eigen::MatrixXd());
        sol.level_basis_.assign(N_ + 1, BasisEvaluator());

        const std::size_t yrow = J_ * k_;
        const std::size_t zrow = J_ * k_ * nw_;
        std::vector<double> ynext(static_cast<std::size_t>(N_ + 1) * yrow);
        std::vector<double> ycur(static_cast<std::size_t>(N_ + 1) * yrow);
        std::vector<double> ytcont(yrow);
        std::vector<double> zlev(static_cast<std::size_t>(N_ + 1) * zrow);
        std::vector<double> base_y(yrow), base_z(zrow), base_ydp(yrow), base_zdp(zrow);
        std::vector<double> target(J_);
        const double dT = dopt.fd_time_step_rel * grid_.horizon();

        // terminal: Y_t(t, T) = h_t(t, X(T))
        const double* xN = ensemble_->state_level(N_);
        parallel_blocks(J_, kParallelBlock, dopt.threads,
                        [&](std::size_t begin, std::size_t end) {
            for (std::size_t j = begin; j < end; ++j) {
                Eigen::Map<const VectorXd> x(xN + j * d_, d_);
                for (int m = 0; m <= N_; ++m) {
                    const double t = grid_.time(m);
                    VectorXd ht;
                    if (model.terminal_t) {
                        ht = model.terminal_t(t, x);
                    } else {
                        ht = (model.terminal(t + dT, x) - model.terminal(t - dT, x)) /
                             (2.0 * dT);
                    }
                    for (int c = 0; c < k_; ++c) ynext[m * yrow + j * k_ + c] = ht[c];
                }
            }
        });
        for (int m = 0; m <= N_; ++m)
            for (std::size_t j = 0; j < S_; ++j)
                for (int c = 0; c < k_; ++c)
                    sol.ysub_[(grid_.node_index(m, N_) * S_ + j) * k_ + c] =
                        ynext[m * yrow + j * k_ + c];
        for (std::size_t j = 0; j < J_; ++j)
            for (int c = 0; c < k_; ++c)
                sol.yd_[(static_cast<std::size_t>(N_) * J_ + j) * k_ + c] =
                    ynext[static_cast<std::size_t>(N_) * yrow + j * k_ + c];

        {
            LevelRegression reg(basis_, ensemble_->state_level(N_ - 1), J_, d_,
                                dopt.threads);
            sol.level_basis_[N_] = reg.evaluator();
            const double* dw = ensemble_->increment_level(N_ - 1);
            std::vector<double> hhat(J_);
            for (int m = 0; m <= N_; ++m) {
                Eigen::MatrixXd zco(reg.cols(), k_ * nw_);
                for (int c = 0; c < k_; ++c) {
                    reg.fit_predict(ynext.data() + m * yrow + c, k_, hhat.data(), 1);
                    for (int w = 0; w < nw_; ++w) {
                        for (std::size_t j = 0; j < J_; ++j)
                            target[j] = (ynext[m * yrow + j * k_ + c] - hhat[j]) *
                                        dw[j * nw_ + w] / dt_;
                        const Eigen::VectorXd beta = reg.fit(target.data());
                        zco.col(c * nw_ + w) = beta;
                        predict_at_states(reg.evaluator(), beta, xN, J_, d_,
                                          zlev.data() + m * zrow + c * nw_ + w,
                                          k_ * nw_, dopt.threads);
                    }
                }
                sol.z_co_[grid_.node_index(m, N_)] = std::move(zco);
            }
            store_z_level(sol, N_, zlev);
            const double* zdiag = zlev.data() + static_cast<std::size_t>(N_) * zrow;
            std::copy(zdiag, zdiag + zrow,
                      sol.zd_.data() + static_cast<std::size_t>(N_) * zrow);
        }

        for (int n = N_ - 1; n >= 0; --n) {
            const double s_n = grid_.time(n);
            const double* xn = ensemble_->state_level(n);
            const double* dw = ensemble_->increment_level(n);
            LevelRegression reg(basis_, xn, J_, d_, dopt.threads);
            sol.level_basis_[n] = reg.evaluator();

            // base arguments at this level: regressed continuation values and
            // the base's own lagged diagonal projections
            predict_matrix(base.ydp_co_[n], base.level_basis_[n], xn, base_ydp.data(), k_);
            predict_matrix(base.zdp_co_[n], base.level_basis_[n], xn, base_zdp.data(),
                           k_ * nw_);

            for (int m = 0; m <= n; ++m) {
                Eigen::MatrixXd yco(reg.cols(), k_);
                for (int c = 0; c < k_; ++c)
                    yco.col(c) = reg.fit_predict(ynext.data() + m * yrow + c, k_,
                                                 ytcont.data() + c, k_);
                sol.ycont_co_[grid_.node_index(m, n)] = std::move(yco);

                Eigen::MatrixXd zco(reg.cols(), k_ * nw_);
                for (int c = 0; c < k_; ++c)
                    for (int w = 0; w < nw_; ++w) {
                        for (std::size_t j = 0; j < J_; ++j)
                            target[j] = (ynext[m * yrow + j * k_ + c] -
                                         ytcont[j * k_ + c]) *
                                        dw[j * nw_ + w] / dt_;
                        zco.col(c * nw_ + w) = reg.fit_predict(
                            target.data(), 1,
                            zlev.data() + m * zrow + c * nw_ + w, k_ * nw_);
                    }
                sol.z_co_[grid_.node_index(m, n)] = std::move(zco);

                const std::size_t node = grid_.node_index(m, n);
                predict_matrix(base.ycont_co_[node], base.level_basis_[n], xn,
                               base_y.data(), k_);
                predict_matrix(base.z_co_[node], base.level_basis_[n], xn,
                               base_z.data(), k_ * nw_);

                const double t_m = grid_.time(m);
                parallel_blocks(J_, kParallelBlock, dopt.threads,
                                [&](std::size_t begin, std::size_t end) {
                    VectorXd gt(k_), gp(k_), gm(k_), drift(k_);
                    VectorXd yb(k_), ydb(k_), yt(k_), ypert(k_);
                    MatrixXd zb(k_, nw_), zdb(k_, nw_), zt(k_, nw_), zpert(k_, nw_);
                    for (std::size_t j = begin; j < end; ++j) {
                        Eigen::Map<const VectorXd> x(xn + j * d_, d_);
                        for (int c = 0; c < k_; ++c) {
                            yb[c] = base_y[j * k_ + c];
                            ydb[c] = base_ydp[j * k_ + c];
                            yt[c] = ytcont[j * k_ + c];
                            for (int w = 0; w < nw_; ++w) {
                                zb(c, w) = base_z[(j * k_ + c) * nw_ + w];
                                zdb(c, w) = base_zdp[(j * k_ + c) * nw_ + w];
                                zt(c, w) = zlev[m * zrow + (j * k_ + c) * nw_ + w];
                            }
                        }
                        if (model.generator_t) {
                            model.generator_t(t_m, s_n, x, yb, zb, ydb, zdb, gt);
                        } else {
                            model.generator(t_m + dT, s_n, x, yb, zb, ydb, zdb, gp);
                            model.generator(t_m - dT, s_n, x, yb, zb, ydb, zdb, gm);
                            gt = (gp - gm) / (2.0 * dT);
                        }
                        // directional derivative of g along (Y_t, Z_t)
                        const double norm =
                            std::sqrt(yt.squaredNorm() + zt.squaredNorm());
                        drift = gt;
                        if (norm > 1e-14) {
                            const double eps = dopt.fd_direction_step;
                            ypert = yb + (eps / norm) * yt;
                            zpert = zb + (eps / norm) * zt;
                            model.generator(t_m, s_n, x, ypert, zpert, ydb, zdb, gp);
                            ypert = yb - (eps / norm) * yt;
                            zpert = zb - (eps / norm) * zt;
                            model.generator(t_m, s_n, x, ypert, zpert, ydb, zdb, gm);
                            drift += (norm / (2.0 * eps)) * (gp - gm);
                        }
                        for (int c = 0; c < k_; ++c)
                            ycur[m * yrow + j * k_ + c] =
                                ytcont[j * k_ + c] - dt_ * drift[c];
                    }
                });

                if (m == n) {
                    double* ydn = sol.yd_.data() + static_cast<std::size_t>(n) * yrow;
                    double* zdn = sol.zd_.data() + static_cast<std::size_t>(n) * zrow;
                    std::copy(ycur.data() + m * yrow, ycur.data() + (m + 1) * yrow, ydn);
                    std::copy(zlev.data() + m * zrow, zlev.data() + (m + 1) * zrow, zdn);
                }
            }

            for (int m = 0; m <= n; ++m)
                for (std::size_t j = 0; j < S_; ++j)
                    for (int c = 0; c < k_; ++c)
                        sol.ysub_[(grid_.node_index(m, n) * S_ + j) * k_ + c] =
                            ycur[m * yrow + j * k_ + c];
            store_z_level(sol, n, zlev);

            for (std::size_t i = 0; i < yrow; ++i)
                if (!std::isfinite(ycur[i]))
                    throw NonFiniteSolution(
                        "solve_derivative_bsvie: non-finite Y_t at level " +
                        std::to_string(n));
            std::swap(ynext, ycur);
        }
        return sol;
    }

private:
    void store_z_level(BsvieSolution& sol, int n, const std::vector<double>& zlev) {
        const std::size_t zrow = J_ * k_ * nw_;
        for (int m = 0; m <= n; ++m)
            for (std::size_t j = 0; j < S_; ++j)
                for (int cw = 0; cw < k_ * nw_; ++cw)
                    sol.zsub_[(grid_.node_index(m, n) * S_ + j) * k_ * nw_ + cw] =
                        zlev[m * zrow + j * k_ * nw_ + cw];
    }

    void predict_matrix(const Eigen::MatrixXd& co, const BasisEvaluator& eval,
                        const double* states, double* out, int ncols) const {
        parallel_blocks(J_, kParallelBlock, opt_.threads,
                        [&](std::size_t begin, std::size_t end) {
            double row[256];
            for (std::size_t j = begin; j < end; ++j) {
                eval.basis_row(states + j * d_, row);
                for (int c = 0; c < ncols; ++c) {
                    double v = 0.0;
                    for (int p = 0; p < co.rows(); ++p) v += co(p, c) * row[p];
                    out[j * ncols + c] = v;
                }
            }
        });
    }

    // Y[m][n][j] = Yhat - dt g(t, s, X, Yhat, Z, yd, zd); optional implicit
    // micro-iteration re-evaluates g at the updated y.
    void generator_update(double t_m, double s_n, const double* xn,
                          const double* ycont_row, const double* z_row,
                          const double* ydp, const double* zdp, double* out) const {
        parallel_blocks(J_, kParallelBlock, opt_.threads,
                        [&](std::size_t begin, std::size_t end) {
            VectorXd y(k_), ydv(k_), gout(k_), ynew(k_);
            MatrixXd z(k_, nw_), zdv(k_, nw_);
            for (std::size_t j = begin; j < end; ++j) {
                Eigen::Map<const VectorXd> x(xn + j * d_, d_);
                for (int c = 0; c < k_; ++c) {
                    y[c] = ycont_row[j * k_ + c];
                    ydv[c] = ydp[j * k_ + c];
                    for (int w = 0; w < nw_; ++w) {
                        z(c, w) = z_row[(j * k_ + c) * nw_ + w];
                        zdv(c, w) = zdp[(j * k_ + c) * nw_ + w];
                    }
                }
                model_->generator(t_m, s_n, x, y, z, ydv, zdv, gout);
                ynew = y - dt_ * gout;
                for (int it = 0; it < opt_.implicit_y_sweeps; ++it) {
                    model_->generator(t_m, s_n, x, ynew, z, ydv, zdv, gout);
                    ynew = y - dt_ * gout;
                }
                for (int c = 0; c < k_; ++c) out[j * k_ + c] = ynew[c];
            }
        });
    }

    std::shared_ptr<const MarkovianModel> model_;
    TriangularGrid grid_;
    std::shared_ptr<const PathEnsemble> ensemble_;
    RegressionBasis basis_;
    BsvieSolverOptions opt_;
    int k_, nw_, d_, N_;
    std::size_t J_, S_;
    double dt_;
};

// ---------------------------------------------------------------------------
// public entry points
// ---------------------------------------------------------------------------

BsvieSolution solve_bsvie_mc(std::shared_ptr<const MarkovianModel> model,
                             const TriangularGrid& grid,
                             std::shared_ptr<const PathEnsemble> ensemble,
                             const RegressionBasis& basis,
                             const BsvieSolverOptions& options) {
    BsvieEngine engine(std::move(model), grid, std::move(ensemble), basis, options);
    return engine.run(BsvieEngine::DiagSource::Lagged, nullptr, nullptr,
                      BsvieSolution::Kind::Base);
}

DerivativeSolution solve_derivative_bsvie(const BsvieSolution& base,
                                          const DerivativeOptions& options) {
    if (base.kind() != BsvieSolution::Kind::Base)
        throw GridMismatch("solve_derivative_bsvie: base must be an explicit-lag solution");
    BsvieSolverOptions opts;
    opts.threads = options.threads;
    opts.store_paths = options.store_paths;
    BsvieEngine engine(base.model(), base.grid(), base.ensemble(), base.basis(), opts);
    return DerivativeSolution{engine.run_derivative(base, options)};
}

PicardResult picard_solve(std::shared_ptr<const MarkovianModel> model,
                          const TriangularGrid& grid,
                          std::shared_ptr<const PathEnsemble> ensemble,
                          const RegressionBasis& basis, int max_iters, double tol,
                          const BsvieSolverOptions& options) {
    const int N = grid.steps();
    const std::size_t J = ensemble->paths();
    const int k = model->sol_dim;
    const int nw = model->noise_dim;
    std::vector<double> frozen_yd(static_cast<std::size_t>(N + 1) * J * k, 0.0);
    std::vector<double> frozen_zd(static_cast<std::size_t>(N + 1) * J * k * nw, 0.0);

    PicardResult result;
    for (int iter = 1; iter <= max_iters; ++iter) {
        BsvieEngine engine(model, grid, ensemble, basis, options);
        BsvieSolution sol = engine.run(BsvieEngine::DiagSource::Frozen, &frozen_yd,
                                       &frozen_zd, BsvieSolution::Kind::PicardFamily);
        double diff = 0.0;
        const std::vector<double>& yd = sol.yd_array();
        const std::vector<double>& zd = sol.zd_array();
        for (std::size_t i = 0; i < frozen_yd.size(); ++i)
            diff = std::max(diff, std::abs(yd[i] - frozen_yd[i]));
        for (std::size_t i = 0; i < frozen_zd.size(); ++i)
            diff = std::max(diff, std::abs(zd[i] - frozen_zd[i]));
        result.history.push_back(diff);
        frozen_yd = yd;
        frozen_zd = zd;
        result.iterations = iter;
        if (diff < tol) {
            result.solution = std::move(sol);
            return result;
        }
    }
    std::ostringstream os;
    os << "picard_solve: no convergence after " << max_iters << " iterations (tol "
       << tol << ")";
    throw PicardNoConvergence(os.str(), result.history);
}

BsdeSliceSolution solve_bsde_slice(std::shared_ptr<const MarkovianModel> model,
                                   double t_fixed, const TriangularGrid& grid,
                                   std::shared_ptr<const PathEnsemble> ensemble,
                                   const RegressionBasis& basis,
                                   const BsvieSolverOptions& options) {
    // a single-row copy of the engine's level arithmetic; diagonal arguments
    // are zeros (a BSDE generator never reads them)
    const int N = grid.steps();
    const int k = model->sol_dim;
    const int nw = model->noise_dim;
    const int d = model->state_dim;
    const std::size_t J = ensemble->paths();
    const double dt = grid.dt();

    BsdeSliceSolution out;
    out.y.assign(static_cast<std::size_t>(N + 1) * J * k, 0.0);
    out.z.assign(static_cast<std::size_t>(N + 1) * J * k * nw, 0.0);

    std::vector<double> target(J);
    const double* xN = ensemble->state_level(N);
    for (std::size_t j = 0; j < J; ++j) {
        Eigen::Map<const VectorXd> x(xN + j * d, d);
        const VectorXd h = model->terminal(t_fixed, x);
        for (int c = 0; c < k; ++c)
            out.y[(static_cast<std::size_t>(N) * J + j) * k + c] = h[c];
    }
    {
        LevelRegression reg(basis, ensemble->state_level(N - 1), J, d, options.threads);
        const double* dw = ensemble->increment_level(N - 1);
        std::vector<double> hhat(J);
        for (int c = 0; c < k; ++c) {
            reg.fit_predict(out.y.data() + (static_cast<std::size_t>(N) * J) * k + c, k,
                            hhat.data(), 1);
            for (int w = 0; w < nw; ++w) {
                for (std::size_t j = 0; j < J; ++j)
                    target[j] = (out.y[(static_cast<std::size_t>(N) * J + j) * k + c] -
                                 hhat[j]) *
                                dw[j * nw + w] / dt;
                const Eigen::VectorXd beta = reg.fit(target.data());
                for (std::size_t j = 0; j < J; ++j)
                    out.z[((static_cast<std::size_t>(N) * J + j) * k + c) * nw + w] =
                        reg.evaluator().evaluate(beta, xN + j * d);
            }
        }
    }

    std::vector<double> ycont(J * k);
    VectorXd y(k), ydv = VectorXd::Zero(k), gout(k);
    MatrixXd z(k, nw), zdv = MatrixXd::Zero(k, nw);
    for (int n = N - 1; n >= 0; --n) {
        const double s_n = grid.time(n);
        const double* xn = ensemble->state_level(n);
        const double* dw = ensemble->increment_level(n);
        LevelRegression reg(basis, xn, J, d, options.threads);
        for (int c = 0; c < k; ++c)
            reg.fit_predict(out.y.data() + (static_cast<std::size_t>(n + 1) * J) * k + c, k,
                            ycont.data() + c, k);
        for (int c = 0; c < k; ++c)
            for (int w = 0; w < nw; ++w) {
                for (std::size_t j = 0; j < J; ++j)
                    target[j] = (out.y[(static_cast<std::size_t>(n + 1) * J + j) * k + c] -
                                 ycont[j * k + c]) *
                                dw[j * nw + w] / dt;
                reg.fit_predict(target.data(), 1,
                                out.z.data() + (static_cast<std::size_t>(n) * J) * k * nw +
                                    c * nw + w,
                                k * nw);
            }
        for (std::size_t j = 0; j < J; ++j) {
            Eigen::Map<const VectorXd> x(xn + j * d, d);
            for (int c = 0; c < k; ++c) {
                y[c] = ycont[j * k + c];
                for (int w = 0; w < nw; ++w)
                    z(c, w) = out.z[((static_cast<std::size_t>(n) * J + j) * k + c) * nw + w];
            }
            model->generator(t_fixed, s_n, x, y, z, ydv, zdv, gout);
            VectorXd ynew = y - dt * gout;
            for (int it = 0; it < options.implicit_y_sweeps; ++it) {
                model->generator(t_fixed, s_n, x, ynew, z, ydv, zdv, gout);
                ynew = y - dt * gout;
            }
            for (int c = 0; c < k; ++c)
                out.y[(static_cast<std::size_t>(n) * J + j) * k + c] = ynew[c];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// solution evaluators
// ---------------------------------------------------------------------------

double BsvieSolution::ycont_at(int m, int n, const double* x, int c) const {
    if (n >= grid_.steps())
        throw GridMismatch("ycont_at: no continuation at the terminal level");
    const Eigen::MatrixXd& co = ycont_co_[grid_.node_index(m, n)];
    return level_basis_[n].evaluate(co.col(c), x);
}

double BsvieSolution::ydiag_proj_at(int n, const double* x, int c) const {
    if (ydp_co_[n].size() == 0)
        throw GridMismatch("ydiag_proj_at: projections not stored for this solution");
    return level_basis_[n].evaluate(ydp_co_[n].col(c), x);
}

double BsvieSolution::zdiag_proj_at(int n, const double* x, int c, int w) const {
    if (zdp_co_[n].size() == 0)
        throw GridMismatch("zdiag_proj_at: projections not stored for this solution");
    return level_basis_[n].evaluate(zdp_co_[n].col(c * nw_ + w), x);
}

double BsvieSolution::z_at(int m, int n, const double* x, int c, int w) const {
    const Eigen::MatrixXd& co = z_co_[grid_.node_index(m, n)];
    return level_basis_[n].evaluate(co.col(c * nw_ + w), x);
}

double BsvieSolution::y_at(int m, int n, const double* x) const {
    if (k_ != 1)
        throw GridMismatch("y_at: scalar solutions only");
    if (n == grid_.steps()) {
        Eigen::Map<const VectorXd> xv(x, model_->state_dim);
        return model_->terminal(grid_.time(m), xv)[0];
    }
    if (!exact_eval_ || kind_ != Kind::Base)
        throw GridMismatch("y_at: available for explicit-lag base solutions only");
    const double ycont = ycont_at(m, n, x);
    VectorXd y(1), ydv(1), gout(1), ynew(1);
    MatrixXd z(1, nw_), zdv(1, nw_);
    y[0] = ycont;
    ydv[0] = ydiag_proj_at(n, x);
    for (int w = 0; w < nw_; ++w) {
        z(0, w) = z_at(m, n, x, 0, w);
        zdv(0, w) = zdiag_proj_at(n, x, 0, w);
    }
    Eigen::Map<const VectorXd> xv(x, model_->state_dim);
    model_->generator(grid_.time(m), grid_.time(n), xv, y, z, ydv, zdv, gout);
    ynew[0] = y[0] - grid_.dt() * gout[0];
    for (int it = 0; it < implicit_y_sweeps_; ++it) {
        model_->generator(grid_.time(m), grid_.time(n), xv, ynew, z, ydv, zdv, gout);
        ynew[0] = y[0] - grid_.dt() * gout[0];
    }
    return ynew[0];
}

void BsvieSolution::export_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_csv: cannot open " + path);
    out << "m,n,t,s,y_mean,y_std,z_mean,z_std,yd_mean,zd_mean\n";
    char buf[256];
    const int N = grid_.steps();
    for (int n = N; n >= 0; --n) {
        // diagonal means over all paths
        double yd_mean = 0.0, zd_mean = 0.0;
        for (std::size_t j = 0; j < paths_; ++j) {
            yd_mean += yd(n, j);
            zd_mean += zd(n, j);
        }
        yd_mean /= paths_;
        zd_mean /= paths_;
        for (int m = 0; m <= n; ++m) {
            double ys = 0, yss = 0, zs = 0, zss = 0;
            for (std::size_t j = 0; j < stored_; ++j) {
                const double yv = y_stored(m, n, j);
                const double zv = z_stored(m, n, j);
                ys += yv;
                yss += yv * yv;
                zs += zv;
                zss += zv * zv;
            }
            const double ym = ys / stored_;
            const double zm = zs / stored_;
            const double ysd = std::sqrt(std::max(0.0, yss / stored_ - ym * ym));
            const double zsd = std::sqrt(std::max(0.0, zss / stored_ - zm * zm));
            std::snprintf(buf, sizeof(buf),
                          "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          m, n, grid_.time(m), grid_.time(n), ym, ysd, zm, zsd,
                          yd_mean, zd_mean);
            out << buf;
        }
    }
}

// ---------------------------------------------------------------------------
// diagonal reconstruction via the t-derivative integral
// ---------------------------------------------------------------------------

DiagonalReconstruction reconstruct_diagonal(const BsvieSolution& base,
                                            const DerivativeSolution& deriv) {
    const BsvieSolution& dv = deriv.solution;
    if (!base.grid().same_shape(dv.grid()) || base.ensemble() != dv.ensemble())
        throw GridMismatch("reconstruct_diagonal: solutions on different grids/ensembles");
    const int N = base.grid().steps();
    const double dt = base.grid().dt();
    const int k = base.sol_dim();
    const int nw = base.noise_dim();
    const std::size_t S = std::min(base.stored_paths(), dv.stored_paths());

    DiagonalReconstruction rec;
    rec.steps = N;
    rec.paths = S;
    rec.k = k;
    rec.nw = nw;
    rec.yd_rec.assign(static_cast<std::size_t>(N + 1) * S * k, 0.0);
    rec.zd_rec.assign(static_cast<std::size_t>(N + 1) * S * k * nw, 0.0);

    for (int n = 0; n <= N; ++n)
        for (std::size_t j = 0; j < S; ++j) {
            for (int c = 0; c < k; ++c) {
                double integral = 0.0;
                for (int m = 0; m <= n; ++m) {
                    const double w = (n == 0) ? 0.0 : ((m == 0 || m == n) ? 0.5 : 1.0);
                    integral += w * dt * dv.y_stored(m, n, j, c);
                }
                rec.yd_rec[(static_cast<std::size_t>(n) * S + j) * k + c] =
                    base.y_stored(0, n, j, c) + integral;
            }
            for (int c = 0; c < k; ++c)
                for (int w = 0; w < nw; ++w) {
                    double integral = 0.0;
                    for (int m = 0; m <= n; ++m) {
                        const double wt = (n == 0) ? 0.0 : ((m == 0 || m == n) ? 0.5 : 1.0);
                        integral += wt * dt * dv.z_stored(m, n, j, c, w);
                    }
                    rec.zd_rec[((static_cast<std::size_t>(n) * S + j) * k + c) * nw + w] =
                        base.z_stored(0, n, j, c, w) + integral;
                }
        }
    return rec;
}

// ---------------------------------------------------------------------------
// S^BMO diagnostic
// ---------------------------------------------------------------------------

namespace {

// paths whose state lies inside the central quantile band at this level
std::vector<char> central_band_mask(const PathEnsemble& ens, int n, double trim) {
    const std::size_t J = ens.paths();
    const int d = ens.state_dim();
    std::vector<char> mask(J, 1);
    if (trim <= 0.0) return mask;
    std::vector<double> comp(J);
    for (int i = 0; i < d; ++i) {
        const double* lev = ens.state_level(n);
        for (std::size_t j = 0; j < J; ++j) comp[j] = lev[j * d + i];
        std::vector<double> sorted = comp;
        const std::size_t lo_idx = static_cast<std::size_t>(trim * (J - 1));
        const std::size_t hi_idx = J - 1 - lo_idx;
        std::nth_element(sorted.begin(), sorted.begin() + lo_idx, sorted.end());
        const double lo = sorted[lo_idx];
        std::nth_element(sorted.begin(), sorted.begin() + hi_idx, sorted.end());
        const double hi = sorted[hi_idx];
        for (std::size_t j = 0; j < J; ++j)
            if (comp[j] < lo || comp[j] > hi) mask[j] = 0;
    }
    return mask;
}

double masked_max(const std::vector<double>& v, const std::vector<char>& mask) {
    double out = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v.size(); ++j)
        if (mask[j]) out = std::max(out, v[j]);
    return out;
}

} // namespace

BmoEstimate estimate_bmo_norm(const BsvieSolution& solution, BmoTarget target,
                              const RegressionBasis& basis, int threads,
                              double state_trim) {
    const TriangularGrid& grid = solution.grid();
    const PathEnsemble& ens = *solution.ensemble();
    const int N = grid.steps();
    const double dt = grid.dt();
    const int k = solution.sol_dim();
    const int nw = solution.noise_dim();
    const int d = ens.state_dim();
    const std::size_t J = solution.paths();

    BmoEstimate est;
    est.profile.assign(N + 1, 0.0);

    std::vector<double> fitted(J);
    if (target == BmoTarget::Yd || target == BmoTarget::Zd) {
        std::vector<double> tail(J, 0.0);
        for (int n = N - 1; n >= 0; --n) {
            for (std::size_t j = 0; j < J; ++j) {
                double sq = 0.0;
                if (target == BmoTarget::Yd) {
                    for (int c = 0; c < k; ++c) {
                        const double v = solution.yd(n, j, c);
                        sq += v * v;
                    }
                } else {
                    for (int c = 0; c < k; ++c)
                        for (int w = 0; w < nw; ++w) {
                            const double v = solution.zd(n, j, c, w);
                            sq += v * v;
                        }
                }
                tail[j] += sq * dt;
            }
            LevelRegression reg(basis, ens.state_level(n), J, d, threads);
            const std::vector<char> mask = central_band_mask(ens, n, state_trim);
            reg.fit_predict(tail.data(), 1, fitted.data(), 1);
            est.profile[n] = masked_max(fitted, mask);
        }
    } else {
        // triangle targets Z / Z_t: tail per fixed m, accumulated level by level
        std::vector<double> tails(static_cast<std::size_t>(N + 1) * J, 0.0);
        std::vector<double> zvals(J);
        for (int n = N - 1; n >= 0; --n) {
            LevelRegression reg(basis, ens.state_level(n), J, d, threads);
            const std::vector<char> mask = central_band_mask(ens, n, state_trim);
            for (int m = 0; m <= n; ++m) {
                double* tail = tails.data() + static_cast<std::size_t>(m) * J;
                for (int c = 0; c < k; ++c)
                    for (int w = 0; w < nw; ++w) {
                        const Eigen::MatrixXd& co = solution.z_coeffs(m, n);
                        reg.predict_own(co.col(c * nw + w), zvals.data(), 1);
                        for (std::size_t j = 0; j < J; ++j)
                            tail[j] += zvals[j] * zvals[j] * dt;
                    }
                reg.fit_predict(tail, 1, fitted.data(), 1);
                est.profile[n] = std::max(est.profile[n], masked_max(fitted, mask));
            }
        }
    }
    est.norm = *std::max_element(est.profile.begin(), est.profile.end());
    return est;
}

// ---------------------------------------------------------------------------
// Feynman-Kac cross-validation
// ---------------------------------------------------------------------------

std::string CrossValidationReport::summary() const {
    std::ostringstream os;
    os << "feynman-kac cross-validation over " << samples << " samples\n"
       << "  rms|Y_mc - u|        = " << rms_y << "   (max " << max_y << ")\n"
       << "  rms|Z_mc - u_x s|    = " << rms_z << "   (max " << max_z << ")\n"
       << "  diag rms|Yd - u(s,s)| = " << rms_yd << "   (max " << max_yd << ")\n"
       << "  diag rms|Zd - u_x s|  = " << rms_zd << "   (max " << max_zd << ")\n"
       << "  paths outside spatial grid: " << outside_fraction * 100.0 << "%\n";
    return os.str();
}

CrossValidationReport feynman_kac_check(const MarkovianModel& model,
                                        const TwoTimeField& pde_field,
                                        const BsvieSolution& mc_solution,
                                        const SpatialGrid& space) {
    if (model.state_dim != 1 || model.sol_dim != 1)
        throw DimensionMismatch("feynman_kac_check: d = k = 1 required");
    const TriangularGrid& grid = mc_solution.grid();
    if (!grid.same_shape(pde_field.grid()))
        throw GridMismatch("feynman_kac_check: PDE and MC grids differ");
    const PathEnsemble& ens = *mc_solution.ensemble();
    const int N = grid.steps();
    const std::size_t S = mc_solution.stored_paths();
    const TwoTimeField grad = gradient_x(pde_field, space);

    // outside fraction over the stored subsample across all levels
    std::size_t outside = 0, total = 0;
    for (int n = 0; n <= N; ++n)
        for (std::size_t j = 0; j < S; ++j) {
            ++total;
            if (!space.contains(ens.scalar_state(n, j))) ++outside;
        }
    CrossValidationReport rep;
    rep.outside_fraction = static_cast<double>(outside) / total;
    if (rep.outside_fraction > 0.01)
        throw PathsOutsideSpatialGrid(
            "feynman_kac_check: > 1% of path samples outside the spatial grid",
            rep.outside_fraction);

    double ssq_y = 0, ssq_z = 0;
    std::size_t count = 0;
    for (int n = N; n >= 0; --n) {
        const double sigma = model.diffusion(grid.time(n))(0, 0);
        for (int m = 0; m <= n; ++m)
            for (std::size_t j = 0; j < S; ++j) {
                const double x = ens.scalar_state(n, j);
                if (!space.contains(x)) continue;
                const double u = pde_field.interpolate(m, n, x);
                const double ux = grad.interpolate(m, n, x);
                const double ey = mc_solution.y_stored(m, n, j) - u;
                const double ez = mc_solution.z_stored(m, n, j) - ux * sigma;
                ssq_y += ey * ey;
                ssq_z += ez * ez;
                rep.max_y = std::max(rep.max_y, std::abs(ey));
                rep.max_z = std::max(rep.max_z, std::abs(ez));
                ++count;
            }
    }
    rep.samples = count;
    rep.rms_y = std::sqrt(ssq_y / count);
    rep.rms_z = std::sqrt(ssq_z / count);

    // diagonals over all paths
    double ssq_yd = 0, ssq_zd = 0;
    std::size_t dcount = 0;
    for (int n = 0; n <= N; ++n) {
        const double sigma = model.diffusion(grid.time(n))(0, 0);
        for (std::size_t j = 0; j < mc_solution.paths(); ++j) {
            const double x = ens.scalar_state(n, j);
            if (!space.contains(x)) continue;
            const double u = pde_field.interpolate(n, n, x);
            const double ux = grad.interpolate(n, n, x);
            const double ey = mc_solution.yd(n, j) - u;
            const double ez = mc_solution.zd(n, j) - ux * sigma;
            ssq_yd += ey * ey;
            ssq_zd += ez * ez;
            rep.max_yd = std::max(rep.max_yd, std::abs(ey));
            rep.max_zd = std::max(rep.max_zd, std::abs(ez));
            ++dcount;
        }
    }
    rep.rms_yd = std::sqrt(ssq_yd / dcount);
    rep.rms_zd = std::sqrt(ssq_zd / dcount);
    return rep;
}

} // namespace volterra
