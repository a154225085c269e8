#include "volterra/model.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <sstream>

namespace volterra {

namespace {

std::string shape_of(const MatrixXd& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

} // namespace

ValidationReport validate_model(const MarkovianModel& model,
                                const TriangularGrid& grid,
                                const std::vector<VectorXd>& probe_points) {
    if (probe_points.empty())
        throw ConfigError("validate_model: probe_points must be non-empty");

    ValidationReport report;
    const int d = model.state_dim;
    const int k = model.sol_dim;
    const int nw = model.noise_dim;

    // Ellipticity: min eigenvalue of sigma*sigma^T at every grid time.
    double min_eig = std::numeric_limits<double>::infinity();
    bool shapes_ok = true;
    std::string sigma_detail;
    for (int n = 0; n <= grid.steps(); ++n) {
        const MatrixXd sigma = model.diffusion(grid.time(n));
        if (sigma.rows() != d || sigma.cols() != nw) {
            shapes_ok = false;
            sigma_detail = "diffusion returned " + shape_of(sigma) + " at s=" +
                           std::to_string(grid.time(n));
            break;
        }
        const MatrixXd a = sigma * sigma.transpose();
        double eig;
        if (d == 1) {
            eig = a(0, 0);
        } else {
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
            eig = es.eigenvalues().minCoeff();
        }
        min_eig = std::min(min_eig, eig);
    }
    report.min_diffusion_eigenvalue = shapes_ok ? min_eig : 0.0;
    {
        ValidationCheck c;
        c.name = "diffusion_shape";
        c.passed = shapes_ok;
        c.detail = shapes_ok ? "" : sigma_detail;
        report.checks.push_back(c);
    }
    {
        ValidationCheck c;
        c.name = "uniform_ellipticity";
        c.passed = shapes_ok && min_eig >= model.ellipticity_floor;
        std::ostringstream os;
        os << "min eig(sigma*sigma^T) = " << (shapes_ok ? min_eig : 0.0)
           << ", floor = " << model.ellipticity_floor;
        c.detail = os.str();
        report.checks.push_back(c);
    }

    // Dimension consistency of the remaining callables at every probe point.
    bool dims_ok = true;
    std::string dims_detail;
    const double t_probe = 0.0;
    const double s_probe = grid.horizon();
    for (const VectorXd& x : probe_points) {
        if (x.size() != d) {
            dims_ok = false;
            dims_detail = "probe point has dimension " + std::to_string(x.size());
            break;
        }
        const VectorXd b = model.drift(s_probe, x);
        if (b.size() != d) {
            dims_ok = false;
            dims_detail = "drift returned " + std::to_string(b.size()) + "-vector";
            break;
        }
        const MatrixXd bx = model.drift_jacobian(s_probe, x);
        if (bx.rows() != d || bx.cols() != d) {
            dims_ok = false;
            dims_detail = "drift_jacobian returned " + shape_of(bx);
            break;
        }
        const VectorXd h = model.terminal(t_probe, x);
        if (h.size() != k) {
            dims_ok = false;
            dims_detail = "terminal returned " + std::to_string(h.size()) + "-vector";
            break;
        }
        VectorXd y = VectorXd::Zero(k);
        MatrixXd z = MatrixXd::Zero(k, nw);
        VectorXd g_out = VectorXd::Constant(k, std::numeric_limits<double>::quiet_NaN());
        model.generator(t_probe, s_probe, x, y, z, y, z, g_out);
        if (!g_out.allFinite()) {
            dims_ok = false;
            dims_detail = "generator produced non-finite output at probe point";
            break;
        }
        if (model.generator_t) {
            VectorXd gt_out = VectorXd::Constant(k, std::numeric_limits<double>::quiet_NaN());
            model.generator_t(t_probe, s_probe, x, y, z, y, z, gt_out);
            if (!gt_out.allFinite()) {
                dims_ok = false;
                dims_detail = "generator_t produced non-finite output at probe point";
                break;
            }
        }
        if (model.terminal_t) {
            const VectorXd ht = model.terminal_t(t_probe, x);
            if (ht.size() != k) {
                dims_ok = false;
                dims_detail = "terminal_t returned " + std::to_string(ht.size()) + "-vector";
                break;
            }
        }
    }
    {
        ValidationCheck c;
        c.name = "dimension_consistency";
        c.passed = dims_ok;
        c.detail = dims_detail;
        report.checks.push_back(c);
    }

    // purity spot-check: repeated evaluation must be bit-identical
    bool pure = true;
    if (dims_ok) {
        const VectorXd& x = probe_points.front();
        const VectorXd b1 = model.drift(s_probe, x);
        const VectorXd b2 = model.drift(s_probe, x);
        pure = pure && b1 == b2;
        VectorXd y = VectorXd::Zero(k);
        MatrixXd z = MatrixXd::Zero(k, nw);
        VectorXd g1(k), g2(k);
        model.generator(t_probe, s_probe, x, y, z, y, z, g1);
        model.generator(t_probe, s_probe, x, y, z, y, z, g2);
        pure = pure && g1 == g2;
        pure = pure && model.terminal(t_probe, x) == model.terminal(t_probe, x);
    }
    {
        ValidationCheck c;
        c.name = "callable_purity";
        c.passed = pure;
        c.detail = pure ? "" : "repeated evaluation produced different outputs";
        report.checks.push_back(c);
    }

    return report;
}

void ensure_valid(const MarkovianModel& model, const TriangularGrid& grid,
                  const std::vector<VectorXd>& probe_points) {
    const ValidationReport report = validate_model(model, grid, probe_points);
    for (const auto& c : report.checks) {
        if (c.passed) continue;
        if (c.name == "uniform_ellipticity")
            throw DegenerateDiffusion("model validation: " + c.detail);
        throw DimensionMismatch("model validation [" + c.name + "]: " + c.detail);
    }
}

} // namespace volterra
