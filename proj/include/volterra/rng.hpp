#pragma once

#include <cmath>
#include <cstdint>

namespace volterra {

/// Counter-based normal generator: the i-th draw of stream (seed, stream_id)
/// is a pure function of (seed, stream_id, i), so parallel scheduling cannot
/// change results.  Mixing is the splitmix64 finalizer; normals come from
/// Box-Muller on consecutive counter pairs.  Statistical quality is adequate
/// for Monte Carlo work; this is not a cryptographic generator.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream_id)
        : key_(mix(seed ^ mix(stream_id + 0x9E3779B97F4A7C15ULL))), counter_(0) {}

    /// Uniform in (0, 1), never exactly 0.
    double uniform() {
        const std::uint64_t bits = mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL);
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace volterra
