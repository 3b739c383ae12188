#pragma once

#include <span>
#include <vector>

#include "avdit/autodiff.hpp"
#include "avdit/encoders.hpp"
#include "avdit/fusion.hpp"
#include "avdit/random.hpp"

namespace avdit {

/// A point on the straight noise-to-data path.
struct OTPathSample {
    Tensor<float> x0;  // standard normal noise
    Tensor<float> x1;  // data
    double t = 0.0;
    Tensor<float> xt;  // (1 - t) x0 + t x1
    Tensor<float> ut;  // x1 - x0
};

OTPathSample ot_path_at(const Tensor<float>& x1, const Tensor<float>& x0, double t);
/// Draws x0 ~ N(0, I) and t ~ U[0, 1].
OTPathSample ot_path_sample(const Tensor<float>& x1, Rng& rng);

/// Mean squared error over rows with M = 1 and all channels.
template <typename T>
Var<T> cfm_loss(Var<T> v_pred, const Tensor<T>& u_t, const TemporalMask& mask);

/// Frames needed to emit `target`: its length plus one blank per adjacent repeat.
std::size_t ctc_min_frames(std::span<const int> target);

/// -log p(target | logprobs) summed over all blank-augmented alignments
/// (blank id 0). `logprobs` is [T' x V]. Throws AlignmentError if T' is too short.
template <typename T>
double ctc_nll(const Tensor<T>& logprobs, std::span<const int> target);

/// Differentiable form of ctc_nll; the gradient w.r.t. each logprob entry is
/// minus its posterior state occupancy.
template <typename T>
Var<T> ctc_loss(Var<T> logprobs, std::span<const int> target);

struct FrameSpan {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive
    bool operator==(const FrameSpan&) const = default;
};

struct Alignment {
    std::vector<FrameSpan> spans;  // one per target symbol
    std::vector<int> frame_labels;  // best path, blanks included
    double log_prob = 0.0;
};

/// Maximum-probability path with backtracking.
template <typename T>
Alignment ctc_viterbi_align(const Tensor<T>& logprobs, std::span<const int> target);

/// Argmax per frame, repeats merged, blanks removed.
template <typename T>
std::vector<int> ctc_greedy_decode(const Tensor<T>& logprobs);

struct LossConfig {
    double lambda_ctc = 0.1;
};

/// cfm + lambda * mean(ctc). Empty ctc leaves cfm unchanged.
template <typename T>
Var<T> total_loss(Var<T> cfm, std::span<const Var<T>> ctc, const LossConfig& cfg);
double total_loss(double cfm, std::span<const double> ctc, const LossConfig& cfg);

}  // namespace avdit
