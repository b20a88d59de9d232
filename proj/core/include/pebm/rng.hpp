#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace pebm {

// Counter-based pseudo-random stream. Every draw is a pure function of
// (key, counter), so streams are reproducible, cheaply forkable, and safe
// to evaluate out of order. Sub-streams are derived by hashing a name or
// salt into the key; all toolkit randomness flows from one root seed
// through named sub-streams.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : key_(mix(key ^ kKeyTweak)) {}

    RngStream derive(std::string_view name) const {
        std::uint64_t h = 1469598103934665603ull; // FNV-1a
        for (unsigned char c : name) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return RngStream(key_ ^ h);
    }

    RngStream derive(std::uint64_t salt) const {
        return RngStream(key_ ^ mix(salt + 0x9e3779b97f4a7c15ull));
    }

    std::uint64_t next_u64() { return at(key_, counter_++); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; consumes two counter slots.
    double normal() {
        const std::uint64_t c = counter_;
        counter_ += 2;
        return normal_at(key_, c);
    }

    // Unbiased integer in [0, n); n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    void seek(std::uint64_t counter) { counter_ = counter; }

    // Stateless access used for per-coordinate chain noise.
    static std::uint64_t at(std::uint64_t key, std::uint64_t counter) {
        return mix(key + 0x9e3779b97f4a7c15ull * (counter + 1));
    }

    static double normal_at(std::uint64_t key, std::uint64_t counter) {
        // u1 in (0,1] keeps the log finite.
        const double u1 =
            (static_cast<double>(at(key, counter) >> 11) + 1.0) * 0x1.0p-53;
        const double u2 =
            static_cast<double>(at(key, counter + 1) >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    // splitmix64 finalizer.
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static constexpr std::uint64_t kKeyTweak = 0x7f4a7c15587c1555ull;

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace pebm
