#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace micpq {

/// SplitMix64 finalizer (Steele, Lea, Flood 2014). Used both to expand a
/// 64-bit seed into generator state and to derive independent sub-seeds.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Named random streams. A stream id is mixed into the root seed so that
/// init, shuffling, dropout and Gumbel noise never share a sequence.
enum class Stream : std::uint64_t {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Gumbel = 4,
    Synth = 5,
    KMeans = 6,
    Split = 7,
    Step = 8,
};

/// derive_seed(root, stream, index) =
///   mix(mix(root + golden * (stream + 1)) ^ (index + golden))
/// where mix is splitmix64_mix and golden = 0x9E3779B97F4A7C15.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
    constexpr std::uint64_t golden = 0x9E3779B97F4A7C15ULL;
    const std::uint64_t a = splitmix64_mix(root + golden * (stream + 1));
    return splitmix64_mix(a ^ (index + golden));
}

constexpr std::uint64_t derive_seed(std::uint64_t root, Stream stream,
                                    std::uint64_t index = 0) noexcept {
    return derive_seed(root, static_cast<std::uint64_t>(stream), index);
}

/// xoshiro256** 1.0 (Blackman & Vigna). State is filled from the seed by
/// four successive SplitMix64 outputs, exactly as the reference code does.
class Rng {
public:
    explicit constexpr Rng(std::uint64_t seed) noexcept {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9E3779B97F4A7C15ULL;
            s = splitmix64_mix(x);
        }
    }

    constexpr std::uint64_t next() noexcept {
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

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n) by Lemire's multiply-shift (n > 0).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    /// Standard normal by Box-Muller; consumes two uniforms per draw.
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
};

/// Fisher-Yates shuffle driven by Rng, so permutations are identical on
/// every standard library.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

}  // namespace micpq
