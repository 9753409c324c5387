#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nvs {

// Deterministic RNG. Normal variates use Box-Muller on raw mt19937_64
// uniforms so the stream does not depend on the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return (gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return gen_() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    float normalf() { return static_cast<float>(normal()); }

    // Independent child stream, e.g. one per scene or per step.
    Rng fork(uint64_t salt) {
        uint64_t s = next_u64() ^ (salt * 0x9E3779B97F4A7C15ull);
        return Rng(s);
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace nvs
