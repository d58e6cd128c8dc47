#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace circuitkl {

// Deterministic RNG used everywhere randomness is needed.
//
// The standard library's engines are portable but its *distributions* are
// implementation-defined, which would break the requirement that identical
// seeds give bitwise-identical models and prompts on every platform. So the
// generator is splitmix64 (a fixed, published mixing function) and every
// mapping from raw 64-bit words to doubles/integers/Gaussians is spelled out
// here.
struct Rng {
    uint64_t state;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1): top 53 bits scaled by 2^-53.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]: never returns 0, safe as a log() argument.
    double uniform_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    // Unbiased-enough integer in [0, n) via 128-bit multiply-shift.
    // (Bias is O(n / 2^64); for vocabulary-sized n it is unobservable.)
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller; the spare value is cached so a pair of
    // uniforms yields two Gaussians.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_open();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2; // 2*pi
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t splitmix_scramble(uint64_t x) {
    uint64_t z = x + 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from (master seed, purpose tag, index).
// Used so that e.g. prompt i of the clean split has its own stream that does
// not depend on how many prompts were drawn before it.
inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
    uint64_t s = splitmix_scramble(master ^ fnv1a64(tag));
    return splitmix_scramble(s ^ (index * 0x9E3779B97F4A7C15ull));
}

} // namespace circuitkl
