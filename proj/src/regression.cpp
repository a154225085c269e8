#include "volterra/regression.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "volterra/parallel.hpp"

namespace volterra {

namespace {

void enumerate_exponents(int d, std::vector<int>& current,
                         std::vector<std::vector<int>>& out, int remaining) {
    if (static_cast<int>(current.size()) == d) {
        out.push_back(current);
        return;
    }
    for (int e = 0; e <= remaining; ++e) {
        current.push_back(e);
        enumerate_exponents(d, current, out, remaining - e);
        current.pop_back();
    }
}

} // namespace

int basis_size(int state_dim, int degree) {
    // C(d + degree, d)
    long long num = 1;
    for (int i = 1; i <= state_dim; ++i)
        num = num * (degree + i) / i;
    return static_cast<int>(num);
}

BasisEvaluator::BasisEvaluator(const RegressionBasis& basis, int state_dim,
                               Eigen::VectorXd center, Eigen::VectorXd scale,
                               bool degenerate)
    : basis_(basis), d_(state_dim), degenerate_(degenerate),
      center_(std::move(center)), scale_(std::move(scale)) {
    if (d_ > 8)
        throw std::invalid_argument("BasisEvaluator: state_dim > 8 not supported");
    if (degenerate_) {
        exponents_.push_back(std::vector<int>(d_, 0));
    } else {
        std::vector<int> current;
        enumerate_exponents(d_, current, exponents_, basis_.degree);
    }
    cols_ = static_cast<int>(exponents_.size());
    if (cols_ > 256 || basis_.degree > 31)
        throw std::invalid_argument("BasisEvaluator: basis too large");
}

void BasisEvaluator::basis_row(const double* x, double* row) const {
    // per-dimension value tables up to the degree, then multi-index products
    const int deg = degenerate_ ? 0 : basis_.degree;
    double table[8][32];
    for (int i = 0; i < d_; ++i) {
        const double xi = (x[i] - center_[i]) / scale_[i];
        table[i][0] = 1.0;
        if (deg >= 1) table[i][1] = xi;
        for (int p = 2; p <= deg; ++p) {
            if (basis_.family == RegressionBasis::Family::Hermite)
                table[i][p] = xi * table[i][p - 1] - (p - 1) * table[i][p - 2];
            else
                table[i][p] = xi * table[i][p - 1];
        }
    }
    for (int c = 0; c < cols_; ++c) {
        double v = 1.0;
        const std::vector<int>& e = exponents_[c];
        for (int i = 0; i < d_; ++i)
            if (e[i] > 0) v *= table[i][e[i]];
        row[c] = v;
    }
}

double BasisEvaluator::evaluate(const Eigen::VectorXd& beta, const double* x) const {
    // the same dot-product kernel as predict_own, so reconstructed values are
    // bit-identical to the recursion's own
    double row[256];
    basis_row(x, row);
    return Eigen::Map<const Eigen::VectorXd>(row, cols_).dot(beta);
}

LevelRegression::LevelRegression(const RegressionBasis& basis, const double* states,
                                 std::size_t n_paths, int state_dim, int threads)
    : n_(n_paths), d_(state_dim), threads_(threads) {
    // Level moments drive both standardization and degeneracy detection.
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d_);
    Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(d_);
    for (std::size_t j = 0; j < n_; ++j)
        for (int i = 0; i < d_; ++i) {
            const double v = states[j * d_ + i];
            sum[i] += v;
            sumsq[i] += v * v;
        }
    const Eigen::VectorXd mean = sum / static_cast<double>(n_);
    Eigen::VectorXd sd(d_);
    for (int i = 0; i < d_; ++i) {
        const double var = std::max(0.0, sumsq[i] / n_ - mean[i] * mean[i]);
        sd[i] = std::sqrt(var);
    }
    const bool degenerate = sd.maxCoeff() < 1e-13 * (1.0 + mean.cwiseAbs().maxCoeff());

    Eigen::VectorXd center = Eigen::VectorXd::Zero(d_);
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(d_);
    if (basis.standardize) {
        center = mean;
        for (int i = 0; i < d_; ++i) scale[i] = (sd[i] > 1e-13) ? sd[i] : 1.0;
    }
    eval_ = BasisEvaluator(basis, d_, std::move(center), std::move(scale), degenerate);

    const int cols = eval_.cols();
    design_.resize(n_ * static_cast<std::size_t>(cols));
    parallel_blocks(n_, kParallelBlock, threads_,
                    [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j)
            eval_.basis_row(states + j * d_, design_.data() + j * cols);
    });

    // Normal equations, accumulated block-wise in fixed order.
    const std::size_t n_blocks = (n_ + kParallelBlock - 1) / kParallelBlock;
    std::vector<Eigen::MatrixXd> partial(n_blocks, Eigen::MatrixXd::Zero(cols, cols));
    parallel_blocks(n_, kParallelBlock, threads_,
                    [&](std::size_t begin, std::size_t end) {
        Eigen::MatrixXd& g = partial[begin / kParallelBlock];
        for (std::size_t j = begin; j < end; ++j) {
            Eigen::Map<const Eigen::VectorXd> row(design_.data() + j * cols, cols);
            g.selfadjointView<Eigen::Lower>().rankUpdate(row);
        }
    });
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(cols, cols);
    for (const auto& g : partial) gram += g;
    gram = Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>());

    gram_.compute(gram);
    const Eigen::VectorXd dvec = gram_.vectorD();
    const double dmax = dvec.cwiseAbs().maxCoeff();
    if (gram_.info() != Eigen::Success || dvec.minCoeff() <= 1e-13 * dmax) {
        used_ridge_ = true;
        const double ridge = 1e-10 * gram.trace() / cols;
        gram_.compute(gram + ridge * Eigen::MatrixXd::Identity(cols, cols));
        std::cerr << "volterra: singular design matrix, ridge fallback applied\n";
    }
}

Eigen::VectorXd LevelRegression::fit(const double* values, std::size_t stride) const {
    const int cols = eval_.cols();
    const std::size_t n_blocks = (n_ + kParallelBlock - 1) / kParallelBlock;
    std::vector<Eigen::VectorXd> partial(n_blocks, Eigen::VectorXd::Zero(cols));
    parallel_blocks(n_, kParallelBlock, threads_,
                    [&](std::size_t begin, std::size_t end) {
        Eigen::VectorXd& r = partial[begin / kParallelBlock];
        for (std::size_t j = begin; j < end; ++j) {
            Eigen::Map<const Eigen::VectorXd> row(design_.data() + j * cols, cols);
            r += values[j * stride] * row;
        }
    });
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(cols);
    for (const auto& r : partial) rhs += r;
    return gram_.solve(rhs);
}

void LevelRegression::predict_own(const Eigen::VectorXd& beta, double* out,
                                  std::size_t out_stride) const {
    const int cols = eval_.cols();
    parallel_blocks(n_, kParallelBlock, threads_,
                    [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            Eigen::Map<const Eigen::VectorXd> row(design_.data() + j * cols, cols);
            out[j * out_stride] = row.dot(beta);
        }
    });
}

Eigen::VectorXd LevelRegression::fit_predict(const double* values, std::size_t stride,
                                             double* out, std::size_t out_stride) const {
    Eigen::VectorXd beta = fit(values, stride);
    predict_own(beta, out, out_stride);
    return beta;
}

} // namespace volterra
