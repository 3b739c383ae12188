#include "avdit/sampler.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "avdit/parallel.hpp"

namespace avdit {

void GuidanceScales::validate() const {
    if (!std::isfinite(text) || !std::isfinite(video) || text < 0 || video < 0) {
        throw InputError("guidance scales must be finite and non-negative");
    }
}

GuidanceScales parse_scales(const std::string& text) {
    std::istringstream in(text);
    GuidanceScales s;
    char comma = 0;
    if (!(in >> s.text >> comma >> s.video) || comma != ',' || !(in >> std::ws).eof()) {
        throw InputError("scales must look like S_TEXT,S_VIDEO, got '" + text + "'");
    }
    s.validate();
    return s;
}

void SamplerConfig::validate() const {
    if (n_steps < 1) throw InputError("n_steps must be at least 1");
    if (!(sway_coeff >= -1.0 && sway_coeff <= 1.0)) throw InputError("sway_coeff must lie in [-1, 1]");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw InputError("ema_decay must lie in [0, 1]");
}

std::vector<double> sway_schedule(int n_steps, double s) {
    if (n_steps < 1) throw InputError("sway_schedule: n_steps must be at least 1");
    std::vector<double> t(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i) {
        const double u = static_cast<double>(i) / n_steps;
        t[static_cast<std::size_t>(i)] = u + s * (std::cos(std::numbers::pi / 2 * u) - 1 + u);
    }
    t.front() = 0.0;
    t.back() = 1.0;
    return t;
}

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& v_full, const Tensor<T>& v_text_only, const Tensor<T>& v_uncond,
                      const GuidanceScales& s) {
    require_same_shape(v_full.shape(), v_text_only.shape(), "cfg_combine");
    require_same_shape(v_full.shape(), v_uncond.shape(), "cfg_combine");
    const T st = static_cast<T>(s.text), dv = static_cast<T>(s.video - s.text);
    Tensor<T> out(v_full.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = v_full[i] + st * (v_full[i] - v_uncond[i]) + dv * (v_full[i] - v_text_only[i]);
    }
    return out;
}

template Tensor<float> cfg_combine(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                   const GuidanceScales&);
template Tensor<double> cfg_combine(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                    const GuidanceScales&);

namespace {

void pin_reference(Tensor<double>& x, const Tensor<double>& noise, const InpaintContext& ctx, double t) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (ctx.mask[r] != 0.0f) continue;
        for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = (1.0 - t) * noise(r, c) + t * ctx.reference(r, c);
    }
}

}  // namespace

Tensor<double> sample(VelocityField& field, Shape shape, const GuidanceScales& scales, const SamplerConfig& cfg,
                      Rng& rng, const std::optional<InpaintContext>& context) {
    cfg.validate();
    scales.validate();
    if (shape.size() != 2) throw DimensionError("sample: state must be [T x C]");
    if (context) {
        require_same_shape(context->reference.shape(), shape, "sample reference");
        if (context->mask.size() != shape[0]) throw DimensionError("sample: mask length differs from frame count");
    }
    Tensor<double> noise(shape);
    for (double& v : noise.data()) v = rng.normal();
    Tensor<double> x = noise;

    const auto ts = sway_schedule(cfg.n_steps, cfg.sway_coeff);
    const bool guided = !scales.is_zero();
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        const double t = ts[i], dt = ts[i + 1] - ts[i];
        Tensor<double> v;
        if (!guided) {
            v = field.velocity(x, t, Branch::full);
        } else {
            Tensor<double> out[3];
            const Branch branches[3] = {Branch::full, Branch::text_only, Branch::uncond};
            parallel_for(3, [&](std::size_t b) { out[b] = field.velocity(x, t, branches[b]); });
            v = cfg_combine(out[0], out[1], out[2], scales);
        }
        require_same_shape(v.shape(), shape, "sample velocity");
        for (std::size_t k = 0; k < x.numel(); ++k) x[k] += dt * v[k];
        if (context) pin_reference(x, noise, *context, ts[i + 1]);
    }
    return x;
}

ModelField::ModelField(const AvDiT& model, ConditionInputs inputs) : model_(model), inputs_(std::move(inputs)) {
    const ModalityFlags given = inputs_.flags;
    const ModalityFlags per_branch[3] = {given, {given.text, false}, {false, false}};
    for (int b = 0; b < 3; ++b) {
        ConditionInputs in = inputs_;
        in.flags = per_branch[b];
        Graph<float> g(false);
        frozen_[b] = freeze(model_.encode_condition(g, in));
    }
}

Tensor<double> ModelField::velocity(const Tensor<double>& x, double t, Branch branch) {
    const int b = static_cast<int>(branch);
    Graph<float> g(false);
    const Condition cond = thaw(g, frozen_.at(b));
    const auto out = model_.forward(g, g.constant(x.cast<float>()), t, cond);
    ++counts_.at(b);
    return out.v_pred.value().cast<double>();
}

Ema::Ema(const ParamStore& params) {
    params.for_each([&](const Parameter<float>& p) { shadow_.emplace(p.name, p.value); });
}

void Ema::update(const ParamStore& params, double decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) throw InputError("ema decay must lie in [0, 1]");
    const float d = static_cast<float>(decay), w = static_cast<float>(1.0 - decay);
    params.for_each([&](const Parameter<float>& p) {
        auto it = shadow_.find(p.name);
        if (it == shadow_.end()) throw InputError("ema has no shadow for parameter " + p.name);
        require_same_shape(it->second.shape(), p.value.shape(), "ema_update");
        for (std::size_t i = 0; i < p.value.numel(); ++i) it->second[i] = d * it->second[i] + w * p.value[i];
    });
}

void Ema::swap(ParamStore& params) {
    params.for_each([&](Parameter<float>& p) {
        auto it = shadow_.find(p.name);
        if (it == shadow_.end()) throw InputError("ema has no shadow for parameter " + p.name);
        require_same_shape(it->second.shape(), p.value.shape(), "ema_swap");
        std::swap(it->second, p.value);
    });
}

void Ema::copy_to(ParamStore& params) const {
    params.for_each([&](Parameter<float>& p) {
        auto it = shadow_.find(p.name);
        if (it == shadow_.end()) throw InputError("ema has no shadow for parameter " + p.name);
        p.value = it->second;
    });
}

}  // namespace avdit
