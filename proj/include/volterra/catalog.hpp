#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "volterra/model.hpp"

namespace volterra {

/// A named test model plus its closed-form reference solution when one
/// exists (u such that Y(t,s) = u(t,s,X(s)), Z = u_x sigma).
struct CatalogModel {
    std::string name;
    std::shared_ptr<const MarkovianModel> model;
    double x0 = 0.0;
    bool has_oracle = false;
    std::function<double(double t, double s, double x)> oracle_u;
    std::function<double(double t, double s, double x)> oracle_ux;
};

/// Built-in models, selected by string key with a numeric parameter map:
///   martingale            g = 0, h = x (Brownian forward)
///   quadratic             g = 0, h = x^2
///   diag_y                g = -Y(s,s), h = 1
///   diag_z                g = -Z(s,s), h = x
///   t_linear              g = 0, h = t x
///   manufactured          forced nonlocal generator around
///                         u*(t,s,x) = (1+t) e^{-s} sin x
///   stochastic_lipschitz  g = x (y + z + ybar + zbar), h = x
///   ou                    g = 0, h = x over dX = -kappa X ds + sigma dB
/// Horizon enters the closed forms of some models; pass the grid horizon.
/// Unknown names or parameter keys raise ConfigError.
CatalogModel make_catalog_model(const std::string& name,
                                const std::map<std::string, double>& params,
                                double horizon);

std::vector<std::string> catalog_names();

} // namespace volterra
