#ifndef GRATMAG_RNG_HPP
#define GRATMAG_RNG_HPP

#include <cmath>
#include <cstdint>

namespace gratmag {

// splitmix64: tiny seedable generator with well-mixed output. Chosen over
// std::mt19937 / std::poisson_distribution because those leave the exact
// variate algorithm implementation-defined; outputs here are bitwise
// reproducible across platforms.
struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }
};

// Derives an independent stream for a (seed, i, j) triple, e.g. one stream
// per pixel. Streams do not depend on evaluation order, so parallel noise
// generation stays deterministic.
inline SplitMix64 substream(std::uint64_t seed, std::uint64_t i, std::uint64_t j) {
    SplitMix64 mixer(seed);
    std::uint64_t a = mixer.next() ^ (i * 0x9e3779b97f4a7c15ull);
    SplitMix64 mixer2(a);
    std::uint64_t b = mixer2.next() ^ (j * 0xc2b2ae3d27d4eb4full);
    SplitMix64 mixer3(b);
    return SplitMix64(mixer3.next());
}

// Knuth's product method, chunked so it stays exact for large means
// (exp(-lambda) underflows past ~700). Exact Poisson, not a normal
// approximation, to keep low-count pixels honest.
inline std::uint64_t poisson_sample(SplitMix64& rng, double lambda) {
    std::uint64_t total = 0;
    while (lambda > 500.0) {
        // Poisson(a+b) = Poisson(a) + Poisson(b) for independent draws
        double chunk = 500.0;
        double l = std::exp(-chunk);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= rng.next_double();
        } while (p > l);
        total += k - 1;
        lambda -= chunk;
    }
    double l = std::exp(-lambda);
    std::uint64_t k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.next_double();
    } while (p > l);
    return total + k - 1;
}

}  // namespace gratmag

#endif
