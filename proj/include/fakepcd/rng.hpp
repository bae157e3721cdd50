#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace fakepcd::rng {

// All randomness in this project flows through the generator below instead of
// <random> distributions, whose output is implementation-defined. The stream
// is part of the reproducibility contract: xoshiro256** 1.0 seeded via
// splitmix64, uniform doubles from the top 53 bits, normals via Box-Muller.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a; std::hash is not pinned down by the standard.
inline std::uint64_t hash_string(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char ch : text) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Mixes extra words into a seed so call sites can carve independent streams
// (per sample, per epoch, ...) out of one user-facing seed.
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
                            std::uint64_t c = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64_next(s);
    s ^= a + 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64_next(s);
    s ^= b + 0xd1b54a32d192ed03ULL;
    h ^= splitmix64_next(s);
    s ^= c + 0x8cb92ba72f3d8dd7ULL;
    h ^= splitmix64_next(s);
    return h;
}

class Xoshiro256 {
public:
    explicit Xoshiro256(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    std::uint64_t next_u64() {
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

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; two uniform draws per call, cosine branch only, so the
    // stream position never depends on previous values.
    double normal(double mean = 0.0, double sigma = 1.0) {
        const double u1 = 1.0 - uniform01(); // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    // Uniform index in [0, n) via 128-bit multiply-shift.
    std::size_t below(std::size_t n) {
        if (n == 0) throw std::invalid_argument("rng::below: n must be positive");
        return static_cast<std::size_t>(
            (static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::swap(values[i - 1], values[below(i)]);
        }
    }

    // m distinct indices out of [0, n), ascending. Partial Fisher-Yates.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m);

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

inline std::vector<std::size_t> Xoshiro256::sample_without_replacement(std::size_t n,
                                                                       std::size_t m) {
    if (m > n) throw std::invalid_argument("rng: cannot sample more elements than available");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
        std::swap(pool[i], pool[i + below(n - i)]);
    }
    pool.resize(m);
    std::sort(pool.begin(), pool.end());
    return pool;
}

} // namespace fakepcd::rng
