#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace motia {

// Counter-based deterministic RNG. Every draw is a pure function of
// (seed, stream, counter), so training and sampling schedules can be
// replayed or evaluated out of order without consuming shared state.
namespace rng {

inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t bits(uint64_t seed, uint64_t stream, uint64_t counter) {
    uint64_t k = mix64(seed ^ 0x5851f42d4c957f2dULL);
    k = mix64(k ^ stream);
    return mix64(k + counter * 0x9e3779b97f4a7c15ULL);
}

// uniform in (0,1]; never returns 0 so log() is safe
inline double uniform(uint64_t seed, uint64_t stream, uint64_t counter) {
    uint64_t u = bits(seed, stream, counter) >> 11;
    double v = static_cast<double>(u) * 0x1.0p-53;
    return v > 0.0 ? v : 0x1.0p-53;
}

inline double normal(uint64_t seed, uint64_t stream, uint64_t counter) {
    double u1 = uniform(seed, stream, 2 * counter);
    double u2 = uniform(seed, stream, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace rng

// A named sub-stream of the run seed. Copies are cheap; draws are stateless.
class RngStream {
public:
    RngStream(uint64_t seed, std::string_view name, uint64_t index = 0)
        : seed_(seed), stream_(rng::mix64(rng::fnv1a(name) ^ (index * 0xda942042e4dd58b5ULL))) {}

    double normal(uint64_t counter) const { return rng::normal(seed_, stream_, counter); }
    double uniform(uint64_t counter) const { return rng::uniform(seed_, stream_, counter); }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(uint64_t counter, int64_t lo, int64_t hi) const {
        uint64_t span = static_cast<uint64_t>(hi - lo + 1);
        return lo + static_cast<int64_t>(rng::bits(seed_, stream_, counter) % span);
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t stream_;
};

}  // namespace motia
