#include "volterra/catalog.hpp"

#include <cmath>

#include "volterra/errors.hpp"

namespace volterra {

namespace {

double param(const std::map<std::string, double>& params, const std::string& key,
             double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

void check_keys(const std::map<std::string, double>& params,
                const std::vector<std::string>& allowed, const std::string& name) {
    for (const auto& [key, _] : params) {
        bool ok = false;
        for (const auto& a : allowed)
            if (key == a) { ok = true; break; }
        if (!ok)
            throw ConfigError("model '" + name + "': unknown parameter '" + key + "'");
    }
}

MarkovianModel scalar_skeleton(double sigma0) {
    MarkovianModel m;
    m.state_dim = m.sol_dim = m.noise_dim = 1;
    m.drift = [](double, const Eigen::Ref<const VectorXd>&) {
        return VectorXd::Zero(1);
    };
    m.drift_jacobian = [](double, const Eigen::Ref<const VectorXd>&) {
        return MatrixXd::Zero(1, 1);
    };
    m.diffusion = [sigma0](double) { return MatrixXd::Constant(1, 1, sigma0); };
    m.generator = [](double, double, const Eigen::Ref<const VectorXd>&,
                     const Eigen::Ref<const VectorXd>&,
                     const Eigen::Ref<const MatrixXd>&,
                     const Eigen::Ref<const VectorXd>&,
                     const Eigen::Ref<const MatrixXd>&,
                     Eigen::Ref<VectorXd> g) { g.setZero(); };
    m.generator_t = m.generator;
    m.terminal_t = [](double, const Eigen::Ref<const VectorXd>&) {
        return VectorXd::Zero(1);
    };
    return m;
}

} // namespace

std::vector<std::string> catalog_names() {
    return {"martingale",   "quadratic", "diag_y", "diag_z",
            "t_linear",     "manufactured", "stochastic_lipschitz", "ou"};
}

CatalogModel make_catalog_model(const std::string& name,
                                const std::map<std::string, double>& params,
                                double horizon) {
    CatalogModel cm;
    cm.name = name;
    cm.x0 = param(params, "x0", 0.0);
    const double T = horizon;

    if (name == "martingale") {
        check_keys(params, {"x0", "sigma"}, name);
        const double sig = param(params, "sigma", 1.0);
        MarkovianModel m = scalar_skeleton(sig);
        m.terminal = [](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, x[0]);
        };
        cm.model = std::make_shared<MarkovianModel>(std::move(m));
        cm.has_oracle = true;
        cm.oracle_u = [](double, double, double x) { return x; };
        cm.oracle_ux = [](double, double, double) { return 1.0; };
        return cm;
    }

    if (name == "quadratic") {
        check_keys(params, {"x0", "sigma"}, name);
        const double sig = param(params, "sigma", 1.0);
        MarkovianModel m = scalar_skeleton(sig);
        m.terminal = [](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, x[0] * x[0]);
        };
        cm.model = std::make_shared<MarkovianModel>(std::move(m));
        cm.has_oracle = true;
        // E[(x + sig B_{T-s})^2] = x^2 + sig^2 (T - s)
        cm.oracle_u = [T, sig](double, double s, double x) {
            return x * x + sig * sig * (T - s);
        };
        cm.oracle_ux = [](double, double, double x) { return 2.0 * x; };
        return cm;
    }

    if (name == "diag_y") {
        check_keys(params, {"x0"}, name);
        MarkovianModel m = scalar_skeleton(1.0);
        m.terminal = [](double, const Eigen::Ref<const VectorXd>&) {
            return VectorXd::Constant(1, 1.0);
        };
        m.generator = [](double, double, const Eigen::Ref<const VectorXd>&,
                         const Eigen::Ref<const VectorXd>&,
                         const Eigen::Ref<const MatrixXd>&,
                         const Eigen::Ref<const VectorXd>& yd,
                         const Eigen::Ref<const MatrixXd>&,
                         Eigen::Ref<VectorXd> g) { g[0] = -yd[0]; };
        cm.model = std::make_shared<MarkovianModel>(std::move(m));
        cm.has_oracle = true;
        // y'(s) = -y, y(T) = 1 along the diagonal ansatz Y(t,s) = y(s)
        cm.oracle_u = [T](double, double s, double) { return std::exp(T - s); };
        cm.oracle_ux = [](double, double, double) { return 0.0; };
        return cm;
    }

    if (name == "diag_z") {
        check_keys(params, {"x0"}, name);
        MarkovianModel m = scalar_skeleton(1.0);
        m.terminal = [](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, x[0]);
        };
        m.generator = [](double, double, const Eigen::Ref<const VectorXd>&,
                         const Eigen::Ref<const VectorXd>&,
                         const Eigen::Ref<const MatrixXd>&,
                         const Eigen::Ref<const VectorXd>&,
                         const Eigen::Ref<const MatrixXd>& zd,
                         Eigen::Ref<VectorXd> g) { g[0] = -zd(0, 0); };
        cm.model = std::make_shared<MarkovianModel>(std::move(m));
        cm.has_oracle = true;
        // Ito ansatz Y = X(s) + c(s): Z = 1, c' = -1, c(T) = 0
        cm.oracle_u = [T](double, double s, double x) { return x + (T - s); };
        cm.oracle_ux = [](double, double, double) { return 1.0; };
        return cm;
    }

    if (name == "t_linear") {
        check_keys(params, {"x0"}, name);
        MarkovianModel m = scalar_skeleton(1.0);
        m.terminal = [](double t, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, t * x[0]);
        };
        m.terminal_t = [](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, x[0]);
        };
        cm.model = std::make_shared<MarkovianModel>(std::move(m));
        cm.has_oracle = true;
        cm.oracle_u = [](double t, double, double x) { return t * x; };
        cm.oracle_ux = [](double t, double, double) { return t; };
        return cm;
    }

    if (name == "manufactured") {
        check_keys(params, {"x0", "a1", "a2", "a3", "a4"}, name);
        const double a1 = param(params, "a1", 1.0);
        const double a2 = param(params, "a2", 0.5);
        const double a3 = param(params, "a3", 0.8);
        const double a4 = param(params, "a4", 0.5);
        // u*(t,s,x) = (1+t) e^{-s} sin x solves the PDE with this forced
        // generator; the correction terms vanish at the exact solution but
        // make g read every argument, diagonals included.
        auto ustar = [](double t, double s, double x) {
            return (1.0 + t) * std::exp(-s) * std::sin(x);
        };
        auto vstar = [](double t, double s, double x) {
            return (1.0 + t) * std::exp(-s) * std::cos(x);
        };
        MarkovianModel m = scalar_skeleton(1.0);
        m.terminal = [T](double t, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, (1.0 + t) * std::exp(-T) * std::sin(x[0]));
        };
        m.terminal_t = [T](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, std::exp(-T) * std::sin(x[0]));
        };
        m.generator = [ustar, vstar, a1, a2, a3, a4](
                          double t, double s, const Eigen::Ref<const VectorXd>& x,
                          const Eigen::Ref<const VectorXd>& y,
                          const Eigen::Ref<const MatrixXd>& z,
                          const Eigen::Ref<const VectorXd>& yd,
                          const Eigen::Ref<const MatrixXd>& zd,
                          Eigen::Ref<VectorXd> g) {
            const double xv = x[0];
            const double source = -1.5 * (1.0 + t) * std::exp(-s) * std::sin(xv);
            g[0] = source + a1 * (y[0] - ustar(t, s, xv)) +
                   a2 * (z(0, 0) - vstar(t, s, xv)) +
                   a3 * (yd[0] - ustar(s, s, xv)) + a4 * (zd(0, 0) - vstar(s, s, xv));
        };
        m.generator_t = [a1, a2](double, double s, const Eigen::Ref<const VectorXd>& x,
                                 const Eigen::Ref<const VectorXd>&,
                                 const Eigen::Ref<const MatrixXd>&,
                                 const Eigen::Ref<const VectorXd>&,
                                 const Eigen::Ref<const MatrixXd>&,
                                 Eigen::Ref<VectorXd> g) {
            g[0] = -(1.5 + a1) * std::exp(-s) * std::sin(x[0]) -
                   a2 * std::exp(-s) * std::cos(x[0]);
        };
        cm.model = std::make_shared<MarkovianModel>(std::move(m));
        cm.has_oracle = true;
        cm.oracle_u = ustar;
        cm.oracle_ux = vstar;
        return cm;
    }

    if (name == "stochastic_lipschitz") {
        check_keys(params, {"x0"}, name);
        MarkovianModel m = scalar_skeleton(1.0);
        m.terminal = [](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, x[0]);
        };
        m.generator = [](double, double, const Eigen::Ref<const VectorXd>& x,
                         const Eigen::Ref<const VectorXd>& y,
                         const Eigen::Ref<const MatrixXd>& z,
                         const Eigen::Ref<const VectorXd>& yd,
                         const Eigen::Ref<const MatrixXd>& zd,
                         Eigen::Ref<VectorXd> g) {
            g[0] = x[0] * (y[0] + z(0, 0) + yd[0] + zd(0, 0));
        };
        cm.model = std::make_shared<MarkovianModel>(std::move(m));
        cm.has_oracle = false;  // self-convergence only
        return cm;
    }

    if (name == "ou") {
        check_keys(params, {"x0", "kappa", "sigma"}, name);
        const double kappa = param(params, "kappa", 1.0);
        const double sig = param(params, "sigma", 1.0);
        MarkovianModel m = scalar_skeleton(sig);
        m.drift = [kappa](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, -kappa * x[0]);
        };
        m.drift_jacobian = [kappa](double, const Eigen::Ref<const VectorXd>&) {
            return MatrixXd::Constant(1, 1, -kappa);
        };
        m.terminal = [](double, const Eigen::Ref<const VectorXd>& x) {
            return VectorXd::Constant(1, x[0]);
        };
        cm.model = std::make_shared<MarkovianModel>(std::move(m));
        cm.has_oracle = true;
        cm.oracle_u = [T, kappa](double, double s, double x) {
            return x * std::exp(-kappa * (T - s));
        };
        cm.oracle_ux = [T, kappa](double, double s, double) {
            return std::exp(-kappa * (T - s));
        };
        return cm;
    }

    throw ConfigError("unknown catalog model '" + name + "'");
}

} // namespace volterra
