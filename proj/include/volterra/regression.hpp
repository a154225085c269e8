#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace volterra {

/// Polynomial family for least-squares conditional expectations.
struct RegressionBasis {
    enum class Family { Monomial, Hermite };
    Family family = Family::Monomial;
    int degree = 3;
    /// Center/scale coordinates by the ensemble moments at each time level.
    bool standardize = true;
};

/// Number of basis functions: multi-indices of total degree <= degree in d vars.
int basis_size(int state_dim, int degree);

/// Snapshot of one level's basis: family, standardization moments, and the
/// multi-index set.  Solutions keep these to evaluate stored regression
/// coefficients at arbitrary states.
class BasisEvaluator {
public:
    BasisEvaluator() = default;
    BasisEvaluator(const RegressionBasis& basis, int state_dim,
                   Eigen::VectorXd center, Eigen::VectorXd scale, bool degenerate);

    int cols() const { return cols_; }
    int state_dim() const { return d_; }
    const Eigen::VectorXd& center() const { return center_; }
    const Eigen::VectorXd& scale() const { return scale_; }

    /// Writes the basis row phi(x) (cols() entries).
    void basis_row(const double* x, double* row) const;

    double evaluate(const Eigen::VectorXd& beta, const double* x) const;

private:
    RegressionBasis basis_;
    int d_ = 0;
    int cols_ = 0;
    bool degenerate_ = false;
    Eigen::VectorXd center_;
    Eigen::VectorXd scale_;
    std::vector<std::vector<int>> exponents_;
};

/// Per-level regression context: builds the design matrix from the ensemble
/// states at one time level, factors the (possibly ridge-regularized) normal
/// equations once, then serves any number of targets.  The factorization is
/// shared read-only across the m-loop of the backward solvers.
///
/// Block-wise accumulation with fixed block boundaries keeps every fit
/// bit-identical for any worker count.  A rank-deficient design matrix
/// (e.g. all paths sharing one state at the initial level) collapses to the
/// intercept, or falls back to a ridge-regularized solve with a warning.
class LevelRegression {
public:
    /// states: level-major slab, x_j = states[j*d .. j*d+d).
    LevelRegression(const RegressionBasis& basis, const double* states,
                    std::size_t n_paths, int state_dim, int threads = 1);

    int cols() const { return eval_.cols(); }
    std::size_t paths() const { return n_; }
    bool used_ridge() const { return used_ridge_; }
    const BasisEvaluator& evaluator() const { return eval_; }

    /// Least-squares coefficients for target[j] = values[j*stride].
    Eigen::VectorXd fit(const double* values, std::size_t stride = 1) const;

    /// Fitted values at the level's own paths: out[j*out_stride] = phi_j . beta.
    void predict_own(const Eigen::VectorXd& beta, double* out,
                     std::size_t out_stride = 1) const;

    /// fit + predict_own in one pass.
    Eigen::VectorXd fit_predict(const double* values, std::size_t stride,
                                double* out, std::size_t out_stride) const;

    double evaluate(const Eigen::VectorXd& beta, const double* x) const {
        return eval_.evaluate(beta, x);
    }

private:
    std::size_t n_;
    int d_;
    int threads_;
    bool used_ridge_ = false;
    BasisEvaluator eval_;
    std::vector<double> design_;  // n x cols, row-major
    Eigen::LDLT<Eigen::MatrixXd> gram_;
};

} // namespace volterra
