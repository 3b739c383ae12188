#include "avdit/optim.hpp"

#include <cmath>

namespace avdit {

Parameter<float>& ParamStore::add(const std::string& name, Tensor<float> init) {
    if (by_name_.contains(name)) throw InputError("duplicate parameter name " + name);
    auto p = std::make_unique<Parameter<float>>();
    p->name = name;
    p->value = std::move(init);
    p->zero_grad();
    Parameter<float>& ref = *p;
    by_name_.emplace(name, p.get());
    params_.push_back(std::move(p));
    return ref;
}

Parameter<float>* ParamStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

const Parameter<float>* ParamStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

Parameter<float>& ParamStore::at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw InputError("unknown parameter " + name);
}

std::size_t ParamStore::numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0f);
}

double ParamStore::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& p : params_) {
        for (float g : p->grad.data()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float s = static_cast<float>(max_norm / (norm + 1e-12));
        for (auto& p : params_) {
            for (float& g : p->grad.data()) g *= s;
        }
    }
    return norm;
}

Checkpoint ParamStore::to_checkpoint() const {
    Checkpoint c;
    for (const auto& p : params_) c.tensors.emplace_back(p->name, p->value);
    return c;
}

std::size_t ParamStore::load(const Checkpoint& ckpt, bool allow_missing) {
    std::size_t loaded = 0;
    for (auto& p : params_) {
        const Tensor<float>* t = ckpt.find(p->name);
        if (!t) {
            if (allow_missing) continue;
            throw InputError("checkpoint is missing parameter " + p->name);
        }
        if (t->shape() != p->value.shape()) {
            throw InputError("checkpoint parameter " + p->name + " has shape " + shape_str(t->shape()) +
                             ", model expects " + shape_str(p->value.shape()));
        }
        p->value = *t;
        ++loaded;
    }
    return loaded;
}

Tensor<float> normal_init(Shape shape, double stddev, Rng& rng) {
    Tensor<float> t(std::move(shape));
    for (float& v : t.data()) v = static_cast<float>(stddev * rng.normal());
    return t;
}

Tensor<float> xavier_init(std::size_t fan_in, std::size_t fan_out, Shape shape, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<float> t(std::move(shape));
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
    return t;
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg, double lr) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    params.for_each([&](Parameter<float>& p) {
        auto [it, inserted] = state.moments.try_emplace(&p);
        auto& [m, v] = it->second;
        if (inserted) {
            m = Tensor<float>(p.value.shape());
            v = Tensor<float>(p.value.shape());
        }
        if (m.shape() != p.value.shape()) throw DimensionError("adam_step: state shape mismatch for " + p.name);
        auto w = p.value.data();
        auto g = p.grad.data();
        auto md = m.data();
        auto vd = v.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            md[i] = static_cast<float>(cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi);
            vd[i] = static_cast<float>(cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi);
            const double mhat = md[i] / bc1;
            const double vhat = vd[i] / bc2;
            double wi = w[i];
            wi -= lr * cfg.weight_decay * wi;
            wi -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
            w[i] = static_cast<float>(wi);
        }
    });
}

double lr_schedule(long step, long warmup_steps, double peak_lr, long total_steps) {
    if (step <= 0) return 0.0;
    if (step >= total_steps) return 0.0;
    if (warmup_steps > 0 && step < warmup_steps) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const long decay_span = total_steps - warmup_steps;
    if (decay_span <= 0) return 0.0;
    return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(decay_span);
}

}  // namespace avdit
