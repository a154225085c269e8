#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "volterra/errors.hpp"

namespace volterra {

/// Uniform discretization of the two-time triangle {(t_m, s_n) : 0 <= m <= n <= N}
/// with t_m = m*T/N.  Iteration over nodes follows the backward-solve order:
/// decreasing n, increasing m within a level.
class TriangularGrid {
public:
    TriangularGrid(double horizon, int steps)
        : horizon_(horizon), steps_(steps) {
        if (!(horizon > 0.0) || steps < 1)
            throw InvalidHorizon("TriangularGrid: need T > 0 and N >= 1");
        dt_ = horizon_ / steps_;
    }

    double horizon() const { return horizon_; }
    int steps() const { return steps_; }
    double dt() const { return dt_; }
    double time(int n) const { return (n == steps_) ? horizon_ : n * dt_; }

    std::size_t node_count() const {
        const std::size_t np1 = static_cast<std::size_t>(steps_) + 1;
        return np1 * (np1 + 1) / 2;
    }

    /// (m, n) pairs in backward-solve order: n = N..0, m = 0..n.
    std::vector<std::pair<int, int>> nodes() const {
        std::vector<std::pair<int, int>> out;
        out.reserve(node_count());
        for (int n = steps_; n >= 0; --n)
            for (int m = 0; m <= n; ++m)
                out.emplace_back(m, n);
        return out;
    }

    /// Linear index of triangle node (m, n), ordered by (n, then m).
    std::size_t node_index(int m, int n) const {
        return static_cast<std::size_t>(n) * (n + 1) / 2 + m;
    }

    bool same_shape(const TriangularGrid& other) const {
        return steps_ == other.steps_ && horizon_ == other.horizon_;
    }

private:
    double horizon_;
    int steps_;
    double dt_;
};

inline TriangularGrid build_grid(double horizon, int steps) {
    return TriangularGrid(horizon, steps);
}

/// One-dimensional spatial grid [x_lo, x_hi] with M_x cells (M_x + 1 nodes).
class SpatialGrid {
public:
    SpatialGrid(double x_lo, double x_hi, int cells)
        : x_lo_(x_lo), x_hi_(x_hi), cells_(cells) {
        if (!(x_lo < x_hi) || cells < 1)
            throw ConfigError("SpatialGrid: need x_lo < x_hi and M_x >= 1");
        dx_ = (x_hi_ - x_lo_) / cells_;
    }

    double x_lo() const { return x_lo_; }
    double x_hi() const { return x_hi_; }
    int cells() const { return cells_; }
    int points() const { return cells_ + 1; }
    double dx() const { return dx_; }
    double x(int i) const { return (i == cells_) ? x_hi_ : x_lo_ + i * dx_; }

    bool contains(double v) const { return v >= x_lo_ && v <= x_hi_; }

private:
    double x_lo_;
    double x_hi_;
    int cells_;
    double dx_;
};

} // namespace volterra
