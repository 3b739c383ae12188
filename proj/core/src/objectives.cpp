#include "avdit/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace avdit {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Blank-augmented label sequence: blank, l1, blank, l2, ..., blank.
std::vector<int> extend(std::span<const int> target) {
    std::vector<int> ext(2 * target.size() + 1, kBlank);
    for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
    return ext;
}

bool can_skip(const std::vector<int>& ext, std::size_t s) {
    return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

template <typename T>
void check_inputs(const Tensor<T>& lp, std::span<const int> target, const char* op) {
    if (lp.rank() != 2) throw DimensionError(std::string(op) + ": logprobs must be [T x V]");
    const std::size_t vocab = lp.cols();
    for (int k : target) {
        if (k <= kBlank || static_cast<std::size_t>(k) >= vocab) {
            throw InputError(std::string(op) + ": target id " + std::to_string(k) + " outside [1, V-1]");
        }
    }
    const std::size_t need = ctc_min_frames(target);
    if (lp.rows() < need) {
        throw AlignmentError(std::string(op) + ": " + std::to_string(lp.rows()) + " frames cannot emit a target needing " +
                             std::to_string(need));
    }
}

// alpha[t][s] includes the emission at t; beta[t][s] covers frames t+1.. only.
template <typename T>
void forward_backward(const Tensor<T>& lp, const std::vector<int>& ext, std::vector<double>& alpha,
                      std::vector<double>& beta) {
    const std::size_t frames = lp.rows(), states = ext.size();
    alpha.assign(frames * states, kNegInf);
    beta.assign(frames * states, kNegInf);
    auto e = [&](std::size_t t, std::size_t s) { return static_cast<double>(lp(t, static_cast<std::size_t>(ext[s]))); };

    alpha[0] = e(0, 0);
    if (states > 1) alpha[1] = e(0, 1);
    for (std::size_t t = 1; t < frames; ++t) {
        for (std::size_t s = 0; s < states; ++s) {
            double a = alpha[(t - 1) * states + s];
            if (s >= 1) a = log_add(a, alpha[(t - 1) * states + s - 1]);
            if (can_skip(ext, s)) a = log_add(a, alpha[(t - 1) * states + s - 2]);
            alpha[t * states + s] = a == kNegInf ? kNegInf : a + e(t, s);
        }
    }

    const std::size_t last = frames - 1;
    beta[last * states + states - 1] = 0.0;
    if (states > 1) beta[last * states + states - 2] = 0.0;
    for (std::size_t t = last; t-- > 0;) {
        for (std::size_t s = 0; s < states; ++s) {
            double b = beta[(t + 1) * states + s] + e(t + 1, s);
            if (s + 1 < states) b = log_add(b, beta[(t + 1) * states + s + 1] + e(t + 1, s + 1));
            if (s + 2 < states && can_skip(ext, s + 2)) b = log_add(b, beta[(t + 1) * states + s + 2] + e(t + 1, s + 2));
            beta[t * states + s] = b;
        }
    }
}

template <typename T>
double total_log_prob(const std::vector<double>& alpha, std::size_t frames, std::size_t states) {
    const std::size_t last = (frames - 1) * states;
    double p = alpha[last + states - 1];
    if (states > 1) p = log_add(p, alpha[last + states - 2]);
    return p;
}

}  // namespace

OTPathSample ot_path_at(const Tensor<float>& x1, const Tensor<float>& x0, double t) {
    require_same_shape(x1.shape(), x0.shape(), "ot_path");
    OTPathSample s{x0, x1, t, Tensor<float>(x1.shape()), Tensor<float>(x1.shape())};
    const float a = static_cast<float>(1.0 - t), b = static_cast<float>(t);
    for (std::size_t i = 0; i < x1.numel(); ++i) {
        s.xt[i] = a * x0[i] + b * x1[i];
        s.ut[i] = x1[i] - x0[i];
    }
    return s;
}

OTPathSample ot_path_sample(const Tensor<float>& x1, Rng& rng) {
    if (!all_finite(x1)) throw InputError("ot_path_sample: data contains non-finite values");
    Tensor<float> x0(x1.shape());
    for (float& v : x0.data()) v = static_cast<float>(rng.normal());
    const double t = rng.uniform();
    return ot_path_at(x1, x0, t);
}

template <typename T>
Var<T> cfm_loss(Var<T> v_pred, const Tensor<T>& u_t, const TemporalMask& mask) {
    require_same_shape(v_pred.shape(), u_t.shape(), "cfm_loss");
    if (v_pred.rows() != mask.size()) throw DimensionError("cfm_loss: mask length differs from frame count");
    double active = 0.0;
    for (float m : mask) active += m;
    if (active <= 0.0) throw InputError("cfm_loss: mask has no frames to generate");
    std::vector<T> w(mask.begin(), mask.end());
    Graph<T>& g = v_pred.graph();
    Var<T> sq = square(sub(v_pred, g.constant(u_t)));
    const T norm = static_cast<T>(1.0 / (active * static_cast<double>(v_pred.cols())));
    return scale(sum(row_scale(sq, std::span<const T>(w))), norm);
}

std::size_t ctc_min_frames(std::span<const int> target) {
    std::size_t n = target.size();
    for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1] ? 1 : 0;
    return n;
}

template <typename T>
double ctc_nll(const Tensor<T>& logprobs, std::span<const int> target) {
    check_inputs(logprobs, target, "ctc");
    const auto ext = extend(target);
    std::vector<double> alpha, beta;
    forward_backward(logprobs, ext, alpha, beta);
    return -total_log_prob<T>(alpha, logprobs.rows(), ext.size());
}

template <typename T>
Var<T> ctc_loss(Var<T> logprobs, std::span<const int> target) {
    const Tensor<T>& lp = logprobs.value();
    check_inputs(lp, target, "ctc");
    const auto ext = extend(target);
    std::vector<double> alpha, beta;
    forward_backward(lp, ext, alpha, beta);
    const double logp = total_log_prob<T>(alpha, lp.rows(), ext.size());
    if (!std::isfinite(logp)) throw AlignmentError("ctc: target has zero probability under the given logprobs");

    // d(-log p)/d lp[t, k] = -sum over states s with label k of exp(alpha + beta - log p).
    const std::size_t frames = lp.rows(), vocab = lp.cols(), states = ext.size();
    Tensor<T> grad(lp.shape());
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t s = 0; s < states; ++s) {
            const double occ = alpha[t * states + s] + beta[t * states + s] - logp;
            if (occ > kNegInf) grad[t * vocab + static_cast<std::size_t>(ext[s])] -= static_cast<T>(std::exp(occ));
        }
    }
    return logprobs.graph().record(Tensor<T>::scalar(static_cast<T>(-logp)), {logprobs},
                                   [logprobs, grad = std::move(grad)](Graph<T>& g, const Tensor<T>& go) {
                                       Tensor<T>* gl = g.grad_of(logprobs);
                                       if (!gl) return;
                                       for (std::size_t i = 0; i < grad.numel(); ++i) (*gl)[i] += go[0] * grad[i];
                                   });
}

template <typename T>
Alignment ctc_viterbi_align(const Tensor<T>& logprobs, std::span<const int> target) {
    check_inputs(logprobs, target, "ctc_viterbi_align");
    const auto ext = extend(target);
    const std::size_t frames = logprobs.rows(), states = ext.size();
    std::vector<double> score(frames * states, kNegInf);
    std::vector<std::size_t> back(frames * states, 0);
    auto e = [&](std::size_t t, std::size_t s) {
        return static_cast<double>(logprobs(t, static_cast<std::size_t>(ext[s])));
    };
    score[0] = e(0, 0);
    if (states > 1) score[1] = e(0, 1);
    for (std::size_t t = 1; t < frames; ++t) {
        for (std::size_t s = 0; s < states; ++s) {
            double best = score[(t - 1) * states + s];
            std::size_t from = s;
            if (s >= 1 && score[(t - 1) * states + s - 1] > best) {
                best = score[(t - 1) * states + s - 1];
                from = s - 1;
            }
            if (can_skip(ext, s) && score[(t - 1) * states + s - 2] > best) {
                best = score[(t - 1) * states + s - 2];
                from = s - 2;
            }
            if (best > kNegInf) {
                score[t * states + s] = best + e(t, s);
                back[t * states + s] = from;
            }
        }
    }
    const std::size_t last = (frames - 1) * states;
    std::size_t s = states - 1;
    if (states > 1 && score[last + states - 2] > score[last + states - 1]) s = states - 2;

    Alignment a;
    a.log_prob = score[last + s];
    if (!std::isfinite(a.log_prob)) throw AlignmentError("ctc_viterbi_align: no path has non-zero probability");
    std::vector<std::size_t> path(frames);
    for (std::size_t t = frames; t-- > 0;) {
        path[t] = s;
        s = back[t * states + s];
    }
    a.frame_labels.resize(frames);
    a.spans.assign(target.size(), FrameSpan{});
    std::vector<bool> seen(target.size(), false);
    for (std::size_t t = 0; t < frames; ++t) {
        a.frame_labels[t] = ext[path[t]];
        if (path[t] % 2 == 1) {
            const std::size_t k = path[t] / 2;
            if (!seen[k]) a.spans[k].start = t;
            seen[k] = true;
            a.spans[k].end = t + 1;
        }
    }
    return a;
}

template <typename T>
std::vector<int> ctc_greedy_decode(const Tensor<T>& logprobs) {
    std::vector<int> out;
    int prev = -1;
    for (std::size_t t = 0; t < logprobs.rows(); ++t) {
        auto row = logprobs.row(t);
        const int k = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (k != prev && k != kBlank) out.push_back(k);
        prev = k;
    }
    return out;
}

template <typename T>
Var<T> total_loss(Var<T> cfm, std::span<const Var<T>> ctc, const LossConfig& cfg) {
    if (cfg.lambda_ctc < 0) throw InputError("lambda_ctc must be non-negative");
    if (ctc.empty() || cfg.lambda_ctc == 0.0) return cfm;
    Var<T> acc = ctc.front();
    for (std::size_t i = 1; i < ctc.size(); ++i) acc = add(acc, ctc[i]);
    return add(cfm, scale(acc, static_cast<T>(cfg.lambda_ctc / static_cast<double>(ctc.size()))));
}

double total_loss(double cfm, std::span<const double> ctc, const LossConfig& cfg) {
    if (cfg.lambda_ctc < 0) throw InputError("lambda_ctc must be non-negative");
    if (ctc.empty()) return cfm;
    const double mean = std::accumulate(ctc.begin(), ctc.end(), 0.0) / static_cast<double>(ctc.size());
    return cfm + cfg.lambda_ctc * mean;
}

#define AVDIT_INSTANTIATE_OBJECTIVES(T)                                                         \
    template Var<T> cfm_loss(Var<T>, const Tensor<T>&, const TemporalMask&);                   \
    template double ctc_nll(const Tensor<T>&, std::span<const int>);                           \
    template Var<T> ctc_loss(Var<T>, std::span<const int>);                                    \
    template Alignment ctc_viterbi_align(const Tensor<T>&, std::span<const int>);              \
    template std::vector<int> ctc_greedy_decode(const Tensor<T>&);                             \
    template Var<T> total_loss(Var<T>, std::span<const Var<T>>, const LossConfig&);

AVDIT_INSTANTIATE_OBJECTIVES(float)
AVDIT_INSTANTIATE_OBJECTIVES(double)

}  // namespace avdit
