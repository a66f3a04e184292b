#pragma once

#include <cmath>
#include <cstdint>

namespace posebridge {

// Counter-based generator: every draw is a pure function of (seed, counter)
// through the splitmix64 finalizer, so streams are identical on every
// platform and can be split by deriving child seeds.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    static uint64_t mix(uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    // Deterministic child seed for a named sub-stream.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        return mix(seed ^ mix(stream ^ 0xA5A5A5A5DEADBEEFull));
    }

    uint64_t next_u64() { return mix(seed_ ^ mix(counter_++)); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without the cached spare so the draw count stays predictable.
    double gauss() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        constexpr double two_pi = 6.28318530717958647692;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t counter_ = 0;
};

}  // namespace posebridge
