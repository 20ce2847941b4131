#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace capfuse {

// Seeded generator whose derived distributions are defined here rather than
// by the standard library, so draws are identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Independent stream for a named consumer, derived from a root seed.
    static Rng derive(std::uint64_t seed, std::string_view stream) {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : stream) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return Rng(splitmix(seed ^ splitmix(h)));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Always consumes at least one draw, even for n == 1.
    std::size_t uniform_index(std::size_t n) {
        const std::uint64_t range = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % range);
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return static_cast<std::size_t>(x % range);
    }

    /// Standard normal via the Marsaglia polar method (no cached spare).
    double normal() {
        for (;;) {
            const double u = 2.0 * uniform01() - 1.0;
            const double v = 2.0 * uniform01() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = uniform_index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
};

} // namespace capfuse
