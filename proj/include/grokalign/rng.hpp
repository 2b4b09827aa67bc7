#pragma once

#include <cstdint>
#include <random>

namespace grokalign {

// Deterministic random stream. Normals use the polar Box-Muller transform with
// a one-value cache so the draw sequence depends only on the seed, not on the
// standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() {
        // 53-bit mantissa in [0, 1)
        return (eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_bounded(span));
    }

    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        cached_ = v * m;
        has_cached_ = true;
        return u * m;
    }

    // +1 or -1 with equal probability
    double rademacher() { return (eng_() & 1u) ? 1.0 : -1.0; }

    std::uint64_t raw() { return eng_(); }

private:
    std::uint64_t next_bounded(std::uint64_t span) {
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
        std::uint64_t r;
        do {
            r = eng_();
        } while (r >= limit);
        return r % span;
    }

    std::mt19937_64 eng_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// splitmix64 finalizer, used to derive independent per-(stream, index) seeds
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    return mix_seed(mix_seed(seed ^ 0x853c49e6748fea9bULL) + mix_seed(stream) + 0x2545f4914f6cdd1dULL * index);
}

}  // namespace grokalign
