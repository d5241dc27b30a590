#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cf3d {

/// Counter-based generator: output i of stream (seed, stream) is a pure
/// function of (seed, stream, i). Two generators built from the same key
/// always produce the same sequence, independent of platform and of how
/// many other generators exist.
class Rng {
public:
    constexpr Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

    /// A fresh, independent generator keyed on this one's key and `stream`.
    constexpr Rng fork(std::uint64_t stream) const noexcept {
        Rng r(0);
        r.key_ = mix(key_ ^ mix(stream * 0x9e3779b97f4a7c15ULL + 0xd1b54a32d192ed03ULL));
        return r;
    }

    constexpr std::uint64_t next_u64() noexcept {
        return mix(key_ + 0x9e3779b97f4a7c15ULL * (++counter_));
    }

    /// Uniform in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    constexpr double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    constexpr std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire's multiply-shift; the bias is < n / 2^64, irrelevant here.
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller; consumes two draws.
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t counter() const noexcept { return counter_; }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace cf3d
