#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace patchalign {

/**
 * Counter-based SplitMix64 stream.
 *
 * The n-th output (n = 0, 1, ...) of a stream with key `k` is
 *
 *     z  = k + (n + 1) * 0x9E3779B97F4A7C15        (mod 2^64)
 *     z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
 *     z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
 *     out = z ^ (z >> 31)
 *
 * which is exactly the reference SplitMix64 generator seeded with `k`.
 * Because the state is just a counter, any output can be reproduced in
 * any language from (key, n) alone. Sub-streams are derived with
 * stream_key(). Derived quantities:
 *
 *   uniform()        (out >> 11) * 2^-53, in [0, 1)
 *   below(n)         rejection sampling: draw out until out >= (2^64 - n) mod n,
 *                    then return out mod n
 *   normal()         Box-Muller on two consecutive outputs a, b:
 *                    sqrt(-2 ln(1 - uniform(a))) * cos(2 pi uniform(b))
 */
class CounterRng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t key) : key_(key) {}

    static constexpr std::uint64_t finalize(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next() {
        ++counter_;
        return finalize(key_ + counter_ * kGamma);
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("CounterRng::below: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = next();
            if (x >= threshold) return x % n;
        }
    }

    /// Inclusive integer range [lo, hi].
    std::int64_t range(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw std::invalid_argument("CounterRng::range: empty range");
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Fisher-Yates, walking from the back.
    template <typename V>
    void shuffle(std::vector<V>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Key of the sub-stream (seed, tag, index):
/// finalize(finalize(seed ^ (tag * gamma)) + (index + 1) * gamma).
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    const std::uint64_t base = CounterRng::finalize(seed ^ (tag * CounterRng::kGamma));
    return CounterRng::finalize(base + (index + 1) * CounterRng::kGamma);
}

/// Stream tags used across the library. Values are part of the data format.
namespace stream_tag {
inline constexpr std::uint64_t kScene = 1;
inline constexpr std::uint64_t kSceneTest = 2;
inline constexpr std::uint64_t kPatchSample = 3;
inline constexpr std::uint64_t kKMeans = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kSourceOrder = 6;
inline constexpr std::uint64_t kTargetOrder = 7;
}  // namespace stream_tag

}  // namespace patchalign
