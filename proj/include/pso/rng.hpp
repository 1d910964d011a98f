#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "pso/tensor.hpp"

namespace pso {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded random stream. The engine is std::mt19937_64, whose output sequence
/// is fixed by the standard; uniforms and normals are derived here rather than
/// through std::*_distribution so draws are identical across standard libraries.
///
/// draws() counts scalar normal variates handed out, so a 2-D normal draw
/// advances it by 2.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

    /// Independent sub-stream keyed by (seed, index). Used to give every
    /// trajectory / sample its own stream so results do not depend on batching.
    static SeededRng substream(std::uint64_t seed, std::uint64_t index) {
        return SeededRng(splitmix64(seed ^ splitmix64(index + 0x5851f42d4c957f2dULL)));
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t draws() const noexcept { return draws_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection keeps the draw exactly uniform.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    /// Standard normal pair via Box-Muller.
    Vec2 normal2() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        draws_ += 2;
        return {r * std::cos(a), r * std::sin(a)};
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            ++draws_;
            return spare_;
        }
        const Vec2 p = normal2();
        spare_ = p.y;
        has_spare_ = true;
        --draws_;
        return p.x;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::uint64_t draws_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace pso
