#pragma once

#include <array>
#include <cstdint>
#include <cmath>
#include <string_view>

#include "stackdid/version.hpp"

namespace stackdid {

/// Seedable, splittable pseudo-random generator.
///
/// The core stream is xoshiro256++ whose 256-bit state is expanded from a
/// 64-bit seed with splitmix64. Derived streams (one per simulation
/// replicate) are produced by mixing the stream index into the root seed
/// and re-expanding, so replicate k sees the same draws no matter how many
/// threads the experiment runs on. Normal variates use the Marsaglia polar
/// method on top of an explicit 53-bit uniform mapping; nothing is
/// delegated to std::normal_distribution, whose output is
/// implementation-defined.
class rng {
public:
    static constexpr std::string_view id = prng_id;

    explicit rng(std::uint64_t seed) : root_seed_(seed) {
        std::uint64_t s = seed;
        for (auto& word : state_) word = sm_next(s);
        // A zero state would trap xoshiro at zero forever. Unreachable in
        // practice through splitmix64, but cheap to rule out.
        if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
    }

    /// Independent child stream. Deterministic in (root seed, index);
    /// derived streams can themselves be split.
    [[nodiscard]] rng stream(std::uint64_t index) const {
        constexpr std::uint64_t golden = 0x9e3779b97f4a7c15ull;
        return rng(sm_scramble(root_seed_ ^ (golden * (index + 1))));
    }

    std::uint64_t next_u64() {
        std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform draw on [0, 1) with 53 random bits.
    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, bound), bias-free via rejection.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound < 2) return 0;
        const std::uint64_t reject_under = (0ull - bound) % bound;  // 2^64 mod bound
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x < reject_under);
        return x % bound;
    }

    /// Standard normal draw (polar method; pairs are generated and cached).
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * next_uniform() - 1.0;
            v = 2.0 * next_uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    [[nodiscard]] std::uint64_t root_seed() const noexcept { return root_seed_; }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    // splitmix64 step: advance the counter and scramble it.
    static constexpr std::uint64_t sm_next(std::uint64_t& s) noexcept {
        s += 0x9e3779b97f4a7c15ull;
        return sm_scramble(s);
    }

    static constexpr std::uint64_t sm_scramble(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t root_seed_;
    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace stackdid
