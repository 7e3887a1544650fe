#pragma once

#include <cmath>
#include <cstdint>

#include "ledit/tensor.hpp"

namespace ledit {

/// Counter-based random stream: draw i is a pure function of (seed, i),
/// so identical (seed, counter) pairs replay identically and independent
/// streams can be split by seed without shared state.
///
/// Word i is splitmix64's finalizer applied to seed + i * golden-gamma.
/// Gaussians use Box-Muller on two consecutive words:
///   z = sqrt(-2 ln u1) * cos(2 pi u2),  u1 in (0,1], u2 in [0,1).
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_word() { return word_at(seed_, counter_++); }

    /// Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_word() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) { return next_word() % n; }

    /// Standard normal draw; consumes exactly two counter positions.
    double gaussian() {
        // u1 shifted into (0,1] so the log is always finite.
        const double u1 = (static_cast<double>(next_word() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_word() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Tensor gaussian_tensor(std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = gaussian();
        return t;
    }

    /// Derive an independent stream; mixing keeps unrelated (seed, tag)
    /// pairs from colliding.
    RngStream split(std::uint64_t tag) const { return RngStream(word_at(seed_, 0xfe1dbeef ^ tag)); }

    static std::uint64_t word_at(std::uint64_t seed, std::uint64_t counter) {
        std::uint64_t z = seed + (counter + 1) * 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

} // namespace ledit
