#include "avdit/fusion.hpp"

#include <cmath>

namespace avdit {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::early_fusion: return "early";
        case Variant::prefix: return "prefix";
        case Variant::cross_attention: return "xattn";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    if (name == "early") return Variant::early_fusion;
    if (name == "prefix") return Variant::prefix;
    if (name == "xattn") return Variant::cross_attention;
    throw InputError("unknown variant '" + name + "' (expected early, prefix or xattn)");
}

TemporalMask span_mask(std::size_t frames, double ratio, Rng& rng) {
    if (frames < 2) throw InputError("span mask needs T >= 2, got " + std::to_string(frames));
    auto len = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(frames)));
    len = std::clamp<std::size_t>(len, 1, frames);
    const std::size_t offset = rng.below(frames - len + 1);
    TemporalMask m(frames, 0.0f);
    std::fill(m.begin() + static_cast<long>(offset), m.begin() + static_cast<long>(offset + len), 1.0f);
    return m;
}

TemporalMask sample_span_mask(std::size_t frames, Rng& rng) {
    const double ratio = rng.uniform(0.7, 1.0);
    return span_mask(frames, ratio, rng);
}

nn::V fuse_audio_video(nn::V h_audio, nn::V h_video, const TemporalMask& mask) {
    if (h_audio.rows() != mask.size() || h_video.rows() != mask.size()) {
        throw DimensionError("fuse_audio_video: lengths differ (audio " + std::to_string(h_audio.rows()) +
                             ", video " + std::to_string(h_video.rows()) + ", mask " + std::to_string(mask.size()) +
                             ")");
    }
    std::vector<float> keep(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) keep[i] = 1.0f - mask[i];
    return concat_cols({row_scale(h_audio, std::span<const float>(keep)), row_scale(h_video, std::span<const float>(mask))});
}

ModalityFlags modality_dropout_branch(ModalityFlags flags, double u, const DropoutProbs& p) {
    if (u < p.both) return {false, false};
    if (u < p.both + p.text) return {false, flags.video};
    if (u < p.both + p.text + p.video) return {flags.text, false};
    return flags;
}

ModalityFlags apply_modality_dropout(ModalityFlags flags, Rng& rng, const DropoutProbs& p) {
    if (p.text < 0 || p.video < 0 || p.both < 0 || p.text + p.video + p.both > 1.0 + 1e-12) {
        throw InputError("modality dropout probabilities must be non-negative and sum to at most 1");
    }
    return modality_dropout_branch(flags, rng.uniform(), p);
}

FrozenCondition freeze(const Condition& c) {
    FrozenCondition f;
    f.stream = c.stream.value();
    f.has_kv = c.kv.valid();
    if (f.has_kv) {
        f.kv = c.kv.value();
        f.query_pos = c.query_pos.value();
    }
    f.prefix = c.prefix;
    f.frames = c.frames;
    return f;
}

Condition thaw(nn::G& g, const FrozenCondition& f) {
    Condition c;
    c.stream = g.constant(f.stream);
    if (f.has_kv) {
        c.kv = g.constant(f.kv);
        c.query_pos = g.constant(f.query_pos);
    }
    c.prefix = f.prefix;
    c.frames = f.frames;
    return c;
}

Tensor<float> progress_encoding(std::size_t n, std::size_t dim) {
    std::vector<double> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = 100.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    return nn::sinusoidal(pos, dim);
}

Conditioner Conditioner::make(ParamStore& ps, const std::string& name, Variant variant, std::size_t dim,
                              std::size_t mel_bins, Rng& rng) {
    Conditioner c;
    c.variant = variant;
    c.audio_proj = nn::Linear::make(ps, name + ".audio_proj", mel_bins, dim, rng);
    c.video_null = &ps.add(name + ".video_null", normal_init(Shape{1, dim}, 0.02, rng));
    c.text_null = &ps.add(name + ".text_null", normal_init(Shape{1, dim}, 0.02, rng));
    switch (variant) {
        case Variant::early_fusion:
            c.filler = &ps.add(name + ".filler", normal_init(Shape{1, dim}, 0.02, rng));
            c.out_proj = nn::Linear::make(ps, name + ".out_proj", 3 * dim, dim, rng);
            break;
        case Variant::prefix:
            c.text_lift = nn::Linear::make(ps, name + ".text_lift", dim, 2 * dim, rng);
            c.out_proj = nn::Linear::make(ps, name + ".out_proj", 2 * dim, dim, rng);
            break;
        case Variant::cross_attention:
            c.out_proj = nn::Linear::make(ps, name + ".out_proj", 2 * dim, dim, rng);
            break;
    }
    return c;
}

nn::V Conditioner::audio(nn::G& g, const Tensor<float>& mel, const TemporalMask& mask) const {
    if (mel.rank() != 2 || mel.rows() != mask.size()) {
        throw DimensionError("conditioning mel " + shape_str(mel.shape()) + " does not match mask length " +
                             std::to_string(mask.size()));
    }
    std::vector<float> keep(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) keep[i] = 1.0f - mask[i];
    return row_scale(audio_proj(g, g.constant(mel)), std::span<const float>(keep));
}

nn::V Conditioner::absent_video(nn::G& g, std::size_t frames) const { return repeat_rows(g.param(*video_null), frames); }

nn::V Conditioner::absent_text(nn::G& g) const { return g.param(*text_null); }

nn::V Conditioner::condition_early_fusion(nn::G& g, nn::V h_av, nn::V h_text) const {
    const std::size_t frames = h_av.rows(), len = h_text.rows();
    if (len > frames) {
        throw InputError("early fusion needs text length <= frames (L=" + std::to_string(len) + ", T=" +
                         std::to_string(frames) + "); shorten the text or lengthen the target, it is never truncated");
    }
    nn::V text = len == frames ? h_text : concat_rows({h_text, repeat_rows(g.param(*filler), frames - len)});
    return out_proj(g, concat_cols({h_av, text}));
}

Condition Conditioner::condition_prefix(nn::G& g, nn::V h_av, nn::V h_text) const {
    Condition c;
    c.frames = h_av.rows();
    if (!h_text.valid()) {
        c.stream = out_proj(g, h_av);
        return c;
    }
    c.prefix = h_text.rows();
    c.stream = out_proj(g, concat_rows({text_lift(g, h_text), h_av}));
    return c;
}

Condition Conditioner::condition_cross_attention(nn::G& g, nn::V h_av, nn::V h_text) const {
    Condition c;
    c.frames = h_av.rows();
    c.stream = out_proj(g, h_av);
    const std::size_t dim = c.stream.cols();
    c.kv = add(h_text, g.constant(progress_encoding(h_text.rows(), dim)));
    c.query_pos = g.constant(progress_encoding(c.frames, dim));
    return c;
}

Condition Conditioner::condition(nn::G& g, nn::V h_av, nn::V h_text) const {
    switch (variant) {
        case Variant::early_fusion: {
            Condition c;
            c.frames = h_av.rows();
            c.stream = condition_early_fusion(g, h_av, h_text);
            return c;
        }
        case Variant::prefix: return condition_prefix(g, h_av, h_text);
        case Variant::cross_attention: return condition_cross_attention(g, h_av, h_text);
    }
    throw InputError("unknown variant");
}

}  // namespace avdit
