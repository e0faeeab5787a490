#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace emosde {

inline uint64_t splitmix64_next(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// xoshiro256** with explicit uniform/normal construction. No std::*_distribution
// anywhere, so every stream reproduces bit-for-bit across platforms and standard
// library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_next(sm);
        has_spare_ = false;
        spare_ = 0.0;
    }

    // Independent substream addressed by (seed, tag, index). Streams with
    // different tags or indices are decorrelated; jobs that each own a stream
    // can run in any order or thread count with identical results.
    static Rng stream(uint64_t seed, std::string_view tag, uint64_t index = 0) {
        uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ull);
        h = mix64(h ^ fnv1a64(tag));
        h = mix64(h ^ (index + 0x632be59bd9b4e019ull));
        return Rng(h);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * kTwoPiHalf * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased integer in [0, n), rejection sampled.
    uint64_t below(uint64_t n) {
        const uint64_t limit = ~0ull - ~0ull % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

private:
    static constexpr double kTwoPiHalf = 3.14159265358979323846;

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace emosde
