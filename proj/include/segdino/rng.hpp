#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace segdino {

/// SplitMix64 (Steele, Lea & Flood 2014). Every random quantity in the
/// project comes from this generator so that results are bit-identical
/// across standard libraries; `<random>` distributions are not portable.
///
/// Streams are derived with `split(key)`: the child state is the mixed
/// parent state xor a hashed key, so independent parameter groups, samples
/// and epochs never share a sequence.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        return mix(z);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept { return next() % n; }

    /// Standard normal via Box-Muller (cosine branch only; one draw per call).
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
    double truncated_normal(double std) noexcept {
        for (;;) {
            const double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * std;
        }
    }

    SplitMix64 split(std::uint64_t key) const noexcept {
        return SplitMix64(mix(state_ + 0x9E3779B97F4A7C15ULL) ^ mix(key ^ 0xD1B54A32D192ED03ULL));
    }
    SplitMix64 split(std::string_view key) const noexcept { return split(hash(key)); }

    /// FNV-1a, used to turn stream names into keys.
    static constexpr std::uint64_t hash(std::string_view s) noexcept {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
        return h;
    }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

}  // namespace segdino
