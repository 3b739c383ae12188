#include "avdit/random.hpp"

#include <cmath>
#include <numbers>

#include "avdit/errors.hpp"

namespace avdit {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : key_(mix64(seed) ^ mix64(~stream)) {}

std::uint64_t Rng::next_u64() {
    const std::uint64_t c = counter_++;
    return mix64(key_ ^ mix64(c));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw InputError("Rng::below: n must be positive");
    // Lemire-free rejection: discard the biased tail of the 64-bit range.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

std::int64_t Rng::range(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw InputError("Rng::range: empty range");
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

double Rng::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::split() { return Rng(mix64(key_ ^ next_u64() ^ 0xA5A5A5A5A5A5A5A5ULL), 0, 0); }

Rng Rng::fork(std::uint64_t id) const {
    return Rng(mix64(mix64(key_) + mix64(id ^ 0x5851F42D4C957F2DULL)), 0, 0);
}

}  // namespace avdit
