#pragma once

#include <cstdint>
#include <string_view>

namespace cortex {

// SplitMix64 finalizer; also used as the stream generator itself.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// A single deterministic random sequence.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1]; safe to pass to log().
    double uniform_pos() { return 1.0 - uniform(); }

private:
    std::uint64_t state_;
};

/// Named substreams derived from (seed, label[, key...]).
///
/// Each consumer draws from its own label, and per-request draws are keyed
/// by (request, visit) rather than by consumption order. Two simulations
/// with the same seed therefore see the same arrivals, outcomes and token
/// counts regardless of topology or scheduling policy.
class RngStreams {
public:
    explicit RngStreams(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    RngStream stream(std::string_view label) const { return RngStream(label_seed(label)); }

    RngStream substream(std::string_view label, std::uint64_t a, std::uint64_t b = 0) const {
        std::uint64_t s = label_seed(label);
        s = splitmix64(s ^ splitmix64(a + 0x632be59bd9b4e019ULL));
        s = splitmix64(s ^ splitmix64(b + 0x8cb92ba72f3d8dd7ULL));
        return RngStream(s);
    }

private:
    std::uint64_t label_seed(std::string_view label) const {
        return splitmix64(seed_ ^ splitmix64(fnv1a64(label)));
    }

    std::uint64_t seed_;
};

}  // namespace cortex
