#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace coherent {

// Deterministic PRNG used everywhere randomness is needed. Self-contained
// (no std::distribution, whose output is implementation-defined) so that a
// seed reproduces the same stream on any platform.
//
// Core generator is splitmix64; streams are derived by mixing tags into the
// seed, which keeps independent consumers (init, shuffle, dropout, ...)
// decoupled from each other's draw counts.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Guard log(0).
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // Derived stream: independent generator keyed by (this seed, tags).
    Rng fork(std::uint64_t tag) const { return Rng(mix(state_, tag)); }
    Rng fork(std::uint64_t a, std::uint64_t b) const { return Rng(mix(mix(state_, a), b)); }
    Rng fork(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
        return Rng(mix(mix(mix(state_, a), b), c));
    }
    Rng fork(std::string_view tag) const { return Rng(mix(state_, fnv1a(tag))); }
    Rng fork(std::string_view tag, std::uint64_t a) const { return Rng(mix(mix(state_, fnv1a(tag)), a)); }
    Rng fork(std::string_view tag, std::uint64_t a, std::uint64_t b) const {
        return Rng(mix(mix(mix(state_, fnv1a(tag)), a), b));
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace coherent
