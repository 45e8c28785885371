#include "foundry/prng.hpp"

namespace foundry {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t splitmix_mix(std::uint64_t z) { return finalize(z + kGolden); }

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::string_view role) {
    return splitmix_mix(splitmix_mix(splitmix_mix(seed) ^ epoch) ^ fnv1a64(role));
}

std::uint64_t Prng::next() {
    state_ += kGolden;
    return finalize(state_);
}

std::uint64_t Prng::below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
}

double Prng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

}  // namespace foundry
