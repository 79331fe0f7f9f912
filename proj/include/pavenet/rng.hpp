#pragma once

// Deterministic pseudo-randomness for the whole pipeline.
//
// Everything that needs noise draws from SplitMix64 (Steele, Lea & Flood,
// "Fast splittable pseudorandom number generators", OOPSLA 2014): a 64-bit
// counter generator with a fixed avalanche mix. Distributions are hand-rolled
// on top of the raw stream so that a given seed produces identical bytes on
// every platform; std::uniform_real_distribution and friends are not
// guaranteed to be reproducible across standard libraries.

#include <cmath>
#include <cstdint>
#include <vector>

namespace pavenet {

class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller; one value per call, fixed call pattern.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), in random order.
    std::vector<int> sample_indices(int n, int k) {
        std::vector<int> all(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
        shuffle(all);
        all.resize(static_cast<size_t>(k));
        return all;
    }

private:
    uint64_t state_;
};

// Derives an independent stream seed from a base seed and a sequence of ids.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    SplitMix64 g(seed);
    uint64_t h = g.next_u64();
    h ^= SplitMix64(a + 0x9e3779b97f4a7c15ULL).next_u64();
    h = SplitMix64(h).next_u64();
    h ^= SplitMix64(b + 0xd1b54a32d192ed03ULL).next_u64();
    h = SplitMix64(h).next_u64();
    h ^= SplitMix64(c + 0x8ebc6af09c88c6e3ULL).next_u64();
    return SplitMix64(h).next_u64();
}

}  // namespace pavenet
