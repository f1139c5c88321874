#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ssrl {

/// splitmix64 mixing step; used to derive independent substream seeds so that
/// parallel and serial runs over a collection agree item by item.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed for item `index` of the stream identified by (seed, stream_tag).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_tag, std::uint64_t index = 0) {
    return mix_seed(mix_seed(seed ^ mix_seed(stream_tag)) + index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(mix_seed(seed)); }

/// Uniform integer in [0, n). Implemented by rejection on the raw 64-bit
/// stream instead of std::uniform_int_distribution, whose output sequence is
/// not pinned by the standard.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
    std::uint64_t v = rng();
    while (v > limit) v = rng();
    return v % n;
}

/// Uniform real in [lo, hi) built from the top 53 bits.
inline double uniform_real(Rng& rng, double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
}

/// Standard normal via Box-Muller on the pinned uniform stream.
inline double normal(Rng& rng) {
    double u1 = uniform_real(rng);
    while (u1 <= 0.0) u1 = uniform_real(rng);
    const double u2 = uniform_real(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

/// Fisher-Yates shuffle driven by uniform_index so the permutation sequence
/// is identical across standard library implementations.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace ssrl
