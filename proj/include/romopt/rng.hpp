#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace romopt {

// Deterministic RNG for everything that must reproduce bit-exactly across
// runs. std::mt19937_64 is fully specified by the standard; the stdlib
// *distributions* are not, so the uniform/normal mappings live here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t raw() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (consumes two draws per pair).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // u1 in [0,1); shift into (0,1] to guard log(0).
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Derive an independent deterministic stream (per-trajectory, per-sample).
    Rng spawn(std::uint64_t stream) const {
        return Rng(seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace romopt
