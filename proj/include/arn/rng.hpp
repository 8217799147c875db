#pragma once

// Counter-based deterministic RNG. Every draw is SplitMix64 applied to an
// incrementing counter, so a (seed, counter) pair fully determines the
// sequence on every platform. `fork` derives independent substreams, which
// keeps per-example randomness stable no matter how work is batched or
// distributed across threads.

#include <cmath>
#include <cstdint>

namespace arn {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
}  // namespace detail

class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), counter_(0) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() { return raw_u64(); }

    // uniform in [0,1)
    double uniform() { return to_unit(raw_u64()); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return raw_u64() % n; }

    // standard normal via Box-Muller with a cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = to_unit(raw_u64());
        } while (u1 <= 0.0);
        const double u2 = to_unit(raw_u64());
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // In-place Fisher-Yates shuffle.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent substream; deterministic in (seed, stream_id) only.
    SeededRng fork(std::uint64_t stream_id) const {
        return SeededRng(detail::splitmix64(seed_ ^ (0xA5A5A5A55A5A5A5AULL + stream_id)));
    }

private:
    std::uint64_t raw_u64() { return detail::splitmix64(seed_ + 0x9E3779B97F4A7C15ULL * counter_++); }

    static double to_unit(std::uint64_t u) {
        return static_cast<double>(u >> 11) * 0x1.0p-53;
    }

    std::uint64_t seed_;
    std::uint64_t counter_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace arn
