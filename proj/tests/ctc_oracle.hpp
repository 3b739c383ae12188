#pragma once

// Exhaustive CTC path enumeration for tiny tables.

#include <cmath>
#include <limits>
#include <vector>

#include "avdit/random.hpp"
#include "avdit/tensor.hpp"

namespace avdit::testing::ctc_oracle {

// Enumerates every frame labelling of a small [T' x V] table.
struct BruteForce {
    double log_total = -std::numeric_limits<double>::infinity();
    double best = -std::numeric_limits<double>::infinity();
};

inline std::vector<int> collapse(const std::vector<int>& path) {
    std::vector<int> out;
    int prev = -1;
    for (int k : path) {
        if (k != prev && k != 0) out.push_back(k);
        prev = k;
    }
    return out;
}

inline BruteForce enumerate(const Tensor<double>& lp, const std::vector<int>& target) {
    const std::size_t frames = lp.rows(), vocab = lp.cols();
    std::vector<int> path(frames, 0);
    double total = 0.0;
    BruteForce r;
    while (true) {
        if (collapse(path) == target) {
            double s = 0.0;
            for (std::size_t t = 0; t < frames; ++t) s += lp(t, static_cast<std::size_t>(path[t]));
            total += std::exp(s);
            r.best = std::max(r.best, s);
        }
        std::size_t i = 0;
        while (i < frames && ++path[i] == static_cast<int>(vocab)) path[i++] = 0;
        if (i == frames) break;
    }
    r.log_total = std::log(total);
    return r;
}

inline Tensor<double> random_logprobs(std::size_t frames, std::size_t vocab, Rng& rng) {
    Tensor<double> t(Shape{frames, vocab});
    for (std::size_t r = 0; r < frames; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < vocab; ++c) z += (t(r, c) = std::exp(rng.uniform(-2.0, 2.0)));
        for (std::size_t c = 0; c < vocab; ++c) t(r, c) = std::log(t(r, c) / z);
    }
    return t;
}

inline std::vector<int> random_target(std::size_t len, std::size_t vocab, Rng& rng) {
    std::vector<int> t;
    for (std::size_t i = 0; i < len; ++i) t.push_back(1 + static_cast<int>(rng.below(vocab - 1)));
    return t;
}

}  // namespace avdit::testing::ctc_oracle
