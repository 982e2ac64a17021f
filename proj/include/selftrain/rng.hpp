#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace selftrain {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Expand a root seed into an independent stream seed for a named consumer.
/// All randomness in a run flows from one root seed through this function.
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                           std::uint64_t salt = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char ch : label) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(root ^ h) + salt);
}

inline Rng make_rng(std::uint64_t root, std::string_view label, std::uint64_t salt = 0) {
    return Rng(derive_seed(root, label, salt));
}

/// Uniform double in [0, 1) built from raw engine bits. Unlike
/// std::uniform_real_distribution its output is specified exactly.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Plain modulo; n is always tiny relative to 2^64 here.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return n == 0 ? 0 : rng() % n; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Standard normal via Box-Muller (one draw per call, the pair's sine half is discarded).
inline double standard_normal(Rng& rng) {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

}  // namespace selftrain
