#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "hiertax/error.hpp"

namespace hiertax {

// Deterministic random stream. The raw engine is std::mt19937_64, whose output
// sequence is fully pinned by the standard; all value transforms (uniform,
// normal, bounded ints, shuffling) are implemented here rather than through
// std distributions, which are not portable across standard libraries.
// Identical seed -> identical stream on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Multiply-high mapping; deterministic.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::below requires n > 0");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Inclusive integer range.
    std::int64_t range(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw ContractError("Rng::range requires lo <= hi");
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    // Standard normal via Box-Muller. Consumes two uniforms per pair; the
    // spare is cached so draw order stays reproducible.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates with our own bounded draw (std::shuffle is not portable).
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // Derive an independent stream deterministically from this seed.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        // splitmix64 mixing of (seed, stream)
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hiertax
