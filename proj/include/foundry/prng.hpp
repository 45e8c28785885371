#pragma once

// The pseudo-random generator behind every seeded decision in the pipeline
// (shard grouping, shuffling, mixing). It is pinned bit-exactly so another
// implementation can reproduce the same streams; see docs/formats.md.
//
//   mix(z):   z += 0x9E3779B97F4A7C15
//             z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//             z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//             return z ^ (z >> 31)
//   next():   state += 0x9E3779B97F4A7C15, then the two multiply rounds
//             above on the new state (SplitMix64)
//   seed:     state0 = mix(mix(mix(seed) ^ epoch) ^ fnv1a64(role))
//   below(n): high 64 bits of the 128-bit product next() * n
//   uniform(): (next() >> 11) * 2^-53

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace foundry {

std::uint64_t splitmix_mix(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::string_view role);

class Prng {
public:
    explicit Prng(std::uint64_t state) : state_(state) {}
    Prng(std::uint64_t seed, std::uint64_t epoch, std::string_view role) : state_(derive_seed(seed, epoch, role)) {}

    std::uint64_t next();
    // Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n);
    // Uniform double in [0, 1).
    double uniform();

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

// Fisher-Yates from the back: for i = n-1 .. 1 swap(v[i], v[below(i + 1)]).
template <class T>
void seeded_shuffle(std::vector<T>& v, Prng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace foundry
