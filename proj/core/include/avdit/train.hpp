#pragma once

#include <functional>
#include <span>
#include <vector>

#include "avdit/corpus.hpp"
#include "avdit/dit.hpp"
#include "avdit/objectives.hpp"
#include "avdit/optim.hpp"
#include "avdit/sampler.hpp"

namespace avdit {

struct OptimConfig {
    double lr = 1e-3;
    long warmup = 200;
    double weight_decay = 0.01;
    double clip = 1.0;
};

struct TrainConfig {
    long steps = 5000;
    std::size_t batch = 1;  // utterances per update
    bool audio_only = false;  // text and video always dropped, CFM only
    DropoutProbs dropout;
    LossConfig loss;
    OptimConfig optim;
    double ema_decay = 0.999;
};

struct TrainLogRow {
    long step = 0;
    double lr = 0, cfm = 0, ctc = 0, total = 0, grad_norm = 0;
    bool operator==(const TrainLogRow&) const = default;
};

/// One training example drawn from an utterance: span mask, modality
/// dropout and a point on the noise-to-data path.
struct TrainExample {
    ConditionInputs inputs;
    OTPathSample path;
};

TrainExample draw_example(const SyntheticUtterance& u, const Alphabet& alphabet, const TrainConfig& cfg, Rng& rng);

struct LossTerms {
    Var<float> cfm;
    std::vector<Var<float>> ctc;  // one per CTC head
    Var<float> total;
};

/// Builds the loss of one example on `g`. CTC terms are present only when
/// the example keeps its text.
LossTerms example_loss(const AvDiT& model, Graph<float>& g, const TrainExample& ex, const TrainConfig& cfg);

/// Runs cfg.steps optimizer updates on utterances drawn uniformly from
/// `data`, tracking `ema`. Calls on_step after each update.
std::vector<TrainLogRow> train_model(AvDiT& model, Ema& ema, std::span<const SyntheticUtterance> data,
                                     const TrainConfig& cfg, Rng& rng,
                                     const std::function<void(const TrainLogRow&)>& on_step = {});

/// Mean CFM loss of the current weights over `n` examples drawn from `rng`
/// (no update), audio-only when cfg.audio_only.
double probe_cfm_loss(const AvDiT& model, std::span<const SyntheticUtterance> data, const TrainConfig& cfg,
                      std::size_t n, Rng rng);

}  // namespace avdit
