#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace hypergen {

// splitmix64: tiny, well-mixed, and identical on every platform. All stochastic
// choices in the toolkit flow through this generator so that a (seed, context)
// pair fully determines every draw, independent of thread scheduling or the
// standard library's distribution implementations.
inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Order-sensitive seed derivation: hash_seed({a,b,c}) != hash_seed({c,b,a}).
inline uint64_t hash_seed(std::initializer_list<uint64_t> parts) {
    uint64_t h = 0x243f6a8885a308d3ull;  // arbitrary nonzero start
    for (uint64_t p : parts) {
        h ^= p + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        uint64_t s = h;
        h = splitmix64(s);
    }
    return h;
}

// FNV-1a over a byte buffer; used for config fingerprints.
inline uint64_t fnv1a(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    int range_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Box-Muller, cosine branch only. One pair of uniforms per normal keeps the
    // draw count independent of call history (no cached second value).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(T* elems, size_t n) {  // Fisher-Yates
        for (size_t i = n; i > 1; --i) {
            size_t j = below(i);
            T tmp = elems[i - 1];
            elems[i - 1] = elems[j];
            elems[j] = tmp;
        }
    }

private:
    uint64_t state_;
};

}  // namespace hypergen
