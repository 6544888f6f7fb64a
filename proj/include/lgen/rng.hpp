#pragma once

#include <cstdint>
#include <random>

namespace lgen {

// Deterministic RNG wrapper. Gaussian draws use Box-Muller instead of
// std::normal_distribution so sequences are identical across standard
// library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    double uniform() {
        // 53-bit mantissa in [0,1)
        return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    uint64_t raw() { return eng_(); }

    // Derive an independent stream, e.g. one per scene index.
    Rng fork(uint64_t salt) {
        uint64_t s = eng_() ^ (salt * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
        return Rng(s);
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lgen
