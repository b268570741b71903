#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace kelab {

// Deterministic splitmix64 generator. We roll our own instead of using
// <random> distributions because libstdc++/libc++ do not guarantee identical
// normal_distribution streams, and every corpus/init in this project must be
// byte-identical across runs and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Box-Muller; one value per call, the twin is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// FNV-1a over a label, mixed with a base seed. Used to derive independent
// substreams (corpus generation, init, batch order, ...) from one run seed.
inline uint64_t derive_seed(uint64_t base, std::string_view label) {
    uint64_t h = 0xcbf29ce484222325ULL ^ base;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    h ^= base * 0x9e3779b97f4a7c15ULL;
    return h ? h : 0x2545f4914f6cdd1dULL;
}

inline uint64_t derive_seed(uint64_t base, std::string_view label, uint64_t index) {
    return derive_seed(base ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL), label);
}

}  // namespace kelab
