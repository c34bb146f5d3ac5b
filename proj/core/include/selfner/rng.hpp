#pragma once

#include <cstdint>
#include <string_view>

namespace selfner {

inline constexpr std::uint64_t kFnv64Offset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnv64Prime = 1099511628211ull;

// FNV-1a 64-bit over raw bytes. Also the trigram hash of the local embedder.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnv64Offset) {
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= kFnv64Prime;
    }
    return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t value, std::uint64_t h = kFnv64Offset) {
    for (int i = 0; i < 8; ++i) {
        h ^= (value >> (8 * i)) & 0xffu;
        h *= kFnv64Prime;
    }
    return h;
}

// Deterministic generator with identical output on every platform. The
// standard <random> distributions are implementation-defined, so everything
// that has to be byte-reproducible across machines draws from this instead.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n), n > 0. Rejection sampling keeps it unbiased.
    std::uint64_t bounded(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform double in [0, 1).
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

private:
    std::uint64_t state_;
};

// Stream key for counter-based draws keyed by (seed, id, ordinal). Answers
// stay independent of iteration order and parallelism.
inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view id, std::uint64_t ordinal) {
    std::uint64_t h = fnv1a64_u64(seed);
    h = fnv1a64(id, h);
    h = fnv1a64_u64(ordinal, h);
    // One scramble round so nearby (seed, ordinal) tuples decorrelate.
    SplitMix64 mix(h);
    return mix.next();
}

} // namespace selfner
