#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace fairdiff {

/// SplitMix64 finalizer. Used for seeding and for deriving child stream keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Seeded, splittable generator: xoshiro256** whose 256-bit state is filled
/// from a SplitMix64 sequence keyed by (seed, stream).
///
/// The output sequence depends only on (seed, stream) and the call sequence;
/// integer draws and uniforms are bit-identical on every platform.
/// Gaussians use the Marsaglia polar method and cache the second variate.
///
/// Stream indices used across the library:
///   0 sampling noise, 1 fair-guidance direction draws, 2 diffusion training,
///   3 iEAT Monte-Carlo, 4-6 classifier split/init/shuffle,
///   7-8 vocabulary/network init, 9 synthetic world.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {
        std::uint64_t sm = mix64(seed ^ mix64(stream + 0x632BE59BD9B4E019ull));
        for (auto& word : state_) {
            sm += 0x9E3779B97F4A7C15ull;
            word = mix64(sm);
        }
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, n). Lemire's nearly-divisionless rejection.
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
            if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    double gaussian() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0, v = 0.0, s = 0.0;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Child generator for `index`. Depends only on this generator's
    /// (seed, stream), never on how many draws have been consumed.
    Rng split(std::uint64_t index) const noexcept {
        return Rng(mix64(seed_ ^ mix64(stream_ ^ 0xD1B54A32D192ED03ull)), index);
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace fairdiff
