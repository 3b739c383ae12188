#pragma once

#include <cstdint>

namespace avdit {

/// Counter-based, splittable PRNG. Output i of a stream is a pure function of
/// (key, i), so a stream can be forked into independent children without
/// sharing state. This is the only randomness source in the project.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// Integer in [lo, hi] inclusive.
    std::int64_t range(std::int64_t lo, std::int64_t hi);

    /// Standard normal via Box-Muller (no cached spare, one call = two draws).
    double normal();

    bool bernoulli(double p) { return uniform() < p; }

    /// Child stream derived from the next output; advances this stream by one.
    Rng split();

    /// Child stream derived from (key, id) without advancing this stream.
    Rng fork(std::uint64_t id) const;

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

   private:
    Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace avdit
