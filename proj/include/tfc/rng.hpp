#pragma once

#include <cstdint>
#include <cmath>

namespace tfc {

// Counter-based generator: the k-th draw from a given seed is a pure
// function of (seed, k), so parallel consumers stay reproducible no matter
// how draws are interleaved. splitmix64 finalizer on (seed, counter).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() { return at(counter_++); }

    // Value of draw k without advancing state.
    std::uint64_t at(std::uint64_t k) const {
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (k + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Box-Muller, consumes two draws.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }
    std::uint64_t seed() const { return seed_; }

    // Derives an independent stream, e.g. one per dataset example.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        Rng r(seed ^ 0xd1b54a32d192ed03ULL);
        return r.at(stream);
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

} // namespace tfc
