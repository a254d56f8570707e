#ifndef FPRECT_RNG_HPP
#define FPRECT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace fprect {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic random source. The generator and every distribution are
// spelled out here so streams are reproducible across platforms and
// standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so that small seeds do not yield small first outputs.
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the distribution exactly uniform.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Independent substream for record `index`; insensitive to the order in
    // which substreams are created.
    Rng fork(std::uint64_t index) const {
        std::uint64_t s = state_;
        std::uint64_t mixed = splitmix64(s) ^ (0x632be59bd9b4e019ULL * (index + 1));
        return Rng(mixed);
    }

    // Deterministic Fisher-Yates shuffle (std::shuffle is
    // implementation-defined).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace fprect

#endif
