#pragma once

// Deterministic random source.
//
// The generator is std::mt19937_64, which the C++ standard specifies
// bit-exactly, so the raw 64-bit stream for a given seed is identical on
// every platform. All derived draws are defined here on top of that stream
// with fixed arithmetic:
//   uniform():       (next_u64() >> 11) * 2^-53, in [0, 1)
//   normal():        Marsaglia polar method (rejection), spare value cached
//   trunc_normal(s): normal() resampled until |z| <= 2, scaled by s
//   rand_below(n):   bit-masked rejection sampling, no modulo bias
//   shuffle():       Fisher-Yates from the back using rand_below
// Integer draws are bit-exact everywhere; the floating-point mappings use
// sqrt/log and match across builds with the same libm.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace ghvit {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via the polar method.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double v1 = 0.0, v2 = 0.0, s = 0.0;
        do {
            v1 = 2.0 * uniform() - 1.0;
            v2 = 2.0 * uniform() - 1.0;
            s = v1 * v1 + v2 * v2;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v2 * f;
        has_spare_ = true;
        return v1 * f;
    }

    // Normal with the tails beyond two standard deviations resampled.
    double trunc_normal(double stddev) {
        double z = 0.0;
        do {
            z = normal();
        } while (z < -2.0 || z > 2.0);
        return z * stddev;
    }

    // Uniform integer in [0, n), rejection sampled against a power-of-two mask.
    std::uint64_t rand_below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        std::uint64_t r = 0;
        do {
            r = next_u64() & mask;
        } while (r >= n);
        return r;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rand_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_{false};
    double spare_{0.0};
};

// splitmix64 finalizer, used to derive per-epoch shuffle seeds from a base
// seed without correlated streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t epoch_seed(std::uint64_t base_seed, std::uint64_t epoch) {
    return splitmix64(base_seed ^ (0x9E3779B97F4A7C15ull * (epoch + 1)));
}

}  // namespace ghvit
