#include "avdit/train.hpp"

#include <cmath>

namespace avdit {

TrainExample draw_example(const SyntheticUtterance& u, const Alphabet& alphabet, const TrainConfig& cfg, Rng& rng) {
    TrainExample ex;
    ex.inputs.mel = u.mel;
    ex.inputs.mask = sample_span_mask(u.frames(), rng);
    ex.inputs.video = u.video;
    ex.inputs.text = alphabet.encode(u.text);
    ex.inputs.flags = cfg.audio_only ? ModalityFlags{false, false} : apply_modality_dropout({}, rng, cfg.dropout);
    ex.path = ot_path_sample(u.mel, rng);
    return ex;
}

LossTerms example_loss(const AvDiT& model, Graph<float>& g, const TrainExample& ex, const TrainConfig& cfg) {
    const Condition cond = model.encode_condition(g, ex.inputs);
    const ModelOutput out = model.forward(g, g.constant(ex.path.xt), ex.path.t, cond);
    LossTerms terms;
    terms.cfm = cfm_loss(out.v_pred, ex.path.ut, ex.inputs.mask);
    // Without text in the condition there is nothing for the heads to align to.
    if (!cfg.audio_only && cfg.loss.lambda_ctc > 0 && ex.inputs.flags.text) {
        for (const auto& [layer, logits] : out.ctc_logits) {
            terms.ctc.push_back(ctc_loss(log_softmax(logits), std::span<const int>(ex.inputs.text)));
        }
    }
    terms.total = total_loss(terms.cfm, std::span<const Var<float>>(terms.ctc), cfg.loss);
    return terms;
}

std::vector<TrainLogRow> train_model(AvDiT& model, Ema& ema, std::span<const SyntheticUtterance> data,
                                     const TrainConfig& cfg, Rng& rng,
                                     const std::function<void(const TrainLogRow&)>& on_step) {
    if (data.empty()) throw InputError("training split is empty");
    if (cfg.batch < 1) throw InputError("batch must be at least 1");
    const Alphabet alphabet = Alphabet::standard();
    AdamState adam;
    const AdamConfig adam_cfg{.weight_decay = cfg.optim.weight_decay};
    std::vector<TrainLogRow> log;
    log.reserve(static_cast<std::size_t>(std::max(0L, cfg.steps)));
    for (long step = 0; step < cfg.steps; ++step) {
        model.params().zero_grad();
        TrainLogRow row;
        row.step = step;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto& u = data[rng.below(data.size())];
            const TrainExample ex = draw_example(u, alphabet, cfg, rng);
            Graph<float> g;
            LossTerms terms = example_loss(model, g, ex, cfg);
            const float inv = 1.0f / static_cast<float>(cfg.batch);
            g.backward(terms.total, Tensor<float>::scalar(inv));
            row.cfm += terms.cfm.value()[0] * inv;
            double ctc = 0;
            for (const auto& c : terms.ctc) ctc += c.value()[0];
            if (!terms.ctc.empty()) row.ctc += ctc / static_cast<double>(terms.ctc.size()) * inv;
            row.total += terms.total.value()[0] * inv;
        }
        if (!std::isfinite(row.total)) throw DomainError("training loss became non-finite at step " + std::to_string(step));
        row.grad_norm = model.params().clip_grad_norm(cfg.optim.clip);
        row.lr = lr_schedule(step, cfg.optim.warmup, cfg.optim.lr, cfg.steps);
        adam_step(model.params(), adam, adam_cfg, row.lr);
        ema.update(model.params(), cfg.ema_decay);
        log.push_back(row);
        if (on_step) on_step(row);
    }
    return log;
}

double probe_cfm_loss(const AvDiT& model, std::span<const SyntheticUtterance> data, const TrainConfig& cfg,
                      std::size_t n, Rng rng) {
    if (data.empty() || n == 0) throw InputError("probe needs data");
    const Alphabet alphabet = Alphabet::standard();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& u = data[rng.below(data.size())];
        const TrainExample ex = draw_example(u, alphabet, cfg, rng);
        Graph<float> g(false);
        const Condition cond = model.encode_condition(g, ex.inputs);
        const auto out = model.forward(g, g.constant(ex.path.xt), ex.path.t, cond);
        total += cfm_loss(out.v_pred, ex.path.ut, ex.inputs.mask).value()[0];
    }
    return total / static_cast<double>(n);
}

}  // namespace avdit
