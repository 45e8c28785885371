#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the library code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace foundry::oracle {

// ---------------------------------------------------------------------------
// Windowing

struct AnchorVerdict {
    std::size_t anchor;
    std::size_t pad_left;
    std::size_t pad_right;
};

// Checks the two threshold inequalities for every anchor on the stride grid.
inline std::vector<AnchorVerdict> surviving_anchors(std::size_t T, std::size_t n_past, std::size_t n_future,
                                                    std::size_t max_left, std::size_t max_right,
                                                    std::size_t stride = 1) {
    std::vector<AnchorVerdict> out;
    for (std::size_t t = 0; t < T; ++t) {
        if (t % stride != 0) continue;
        long left = static_cast<long>(n_past) - static_cast<long>(t);
        long right = static_cast<long>(t + n_future) - static_cast<long>(T - 1);
        std::size_t pl = left > 0 ? static_cast<std::size_t>(left) : 0;
        std::size_t pr = right > 0 ? static_cast<std::size_t>(right) : 0;
        if (pl <= max_left && pr <= max_right) out.push_back({t, pl, pr});
    }
    return out;
}

enum class Pad { copy, zero, reflect };

// Episode row feeding an out-of-range index, folding back and forth for
// reflect; std::nullopt for zero.
inline std::optional<std::size_t> source_row(long idx, std::size_t T, Pad pad) {
    const long last = static_cast<long>(T) - 1;
    if (idx >= 0 && idx <= last) return static_cast<std::size_t>(idx);
    switch (pad) {
        case Pad::copy: return static_cast<std::size_t>(idx < 0 ? 0 : last);
        case Pad::zero: return std::nullopt;
        case Pad::reflect:
            while (idx < 0 || idx > last) {
                if (idx < 0) idx = -idx;
                if (idx > last) idx = 2 * last - idx;
            }
            return static_cast<std::size_t>(idx);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Generator: a from-scratch SplitMix64 with the documented seed derivation.

struct RefRng {
    std::uint64_t state;

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t fnv(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    RefRng(std::uint64_t seed, std::uint64_t epoch, std::string_view role)
        : state(mix(mix(mix(seed) ^ epoch) ^ fnv(role))) {}

    std::uint64_t next() {
        state += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
    }
};

// ---------------------------------------------------------------------------
// Statistics

struct Moments {
    double mean = 0.0;
    double var = 0.0;  // population
};

// Two-pass mean and variance.
inline Moments two_pass(const std::vector<double>& xs) {
    Moments m;
    if (xs.empty()) return m;
    long double s = 0;
    for (double x : xs) s += x;
    m.mean = static_cast<double>(s / xs.size());
    long double q = 0;
    for (double x : xs) q += (x - m.mean) * (x - m.mean);
    m.var = static_cast<double>(q / xs.size());
    return m;
}

// Fraction of `sorted` strictly below v and at or below v; a quantile
// estimate v for level q is within rank error e when [lo, hi] meets
// [q - e, q + e].
inline bool within_rank_error(const std::vector<double>& sorted, double v, double q, double e) {
    const double n = static_cast<double>(sorted.size());
    double lo = static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin()) / n;
    double hi = static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), v) - sorted.begin()) / n;
    return hi >= q - e && lo <= q + e;
}

// ---------------------------------------------------------------------------
// Beta posteriors

// P(X > Y) for X ~ Beta(a1, b1), Y ~ Beta(a2, b2) with integer a1 (closed form
// sum over log-beta terms).
inline double prob_beta_greater(int a1, int b1, int a2, int b2) {
    auto lbeta = [](double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); };
    // P(Y > X) = sum_{i=0}^{a2-1} B(a1+i, b1+b2) / ((b2+i) B(1+i, b2) B(a1, b1))
    double p = 0.0;
    for (int i = 0; i < a2; ++i) {
        p += std::exp(lbeta(a1 + i, b1 + b2) - std::log(b2 + i) - lbeta(1 + i, b2) - lbeta(a1, b1));
    }
    return 1.0 - p;
}

}  // namespace foundry::oracle
