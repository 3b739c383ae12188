#pragma once

#include <string>
#include <vector>

#include "avdit/nn.hpp"

namespace avdit {

enum class Variant { early_fusion, prefix, cross_attention };

/// "early" | "prefix" | "xattn"
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

/// M per frame: 1 = generate, 0 = reference context.
using TemporalMask = std::vector<float>;

/// One contiguous run of round(ratio * T) ones (at least one) at a uniform offset.
TemporalMask span_mask(std::size_t frames, double ratio, Rng& rng);
/// span_mask with ratio ~ U[0.7, 1.0].
TemporalMask sample_span_mask(std::size_t frames, Rng& rng);

/// [(1 - M) * h_audio ; M * h_video], [T x 2D].
nn::V fuse_audio_video(nn::V h_audio, nn::V h_video, const TemporalMask& mask);

struct ModalityFlags {
    bool text = true;
    bool video = true;
    bool operator==(const ModalityFlags&) const = default;
};

struct DropoutProbs {
    double text = 0.2;
    double video = 0.2;
    double both = 0.2;
};

/// Exclusive branches on one uniform draw u: [0, both) drops both,
/// then text only, then video only; otherwise nothing is dropped.
ModalityFlags modality_dropout_branch(ModalityFlags flags, double u, const DropoutProbs& p);
ModalityFlags apply_modality_dropout(ModalityFlags flags, Rng& rng, const DropoutProbs& p);

/// Raw conditioning for one forward pass.
struct ConditionInputs {
    Tensor<float> mel;           // [T x mel_bins]; rows where M = 1 are never read
    TemporalMask mask;           // length T
    Tensor<float> video;         // [Tv x Dv], used when flags.video
    std::size_t video_offset = 0;  // encoded video is placed starting at this frame
    std::vector<int> text;       // token ids, used when flags.text
    ModalityFlags flags;

    std::size_t frames() const { return mask.size(); }
};

/// Graph-bound conditioning stream in the form the backbone consumes.
struct Condition {
    nn::V stream;     // [(P + T) x D]
    nn::V kv;         // cross-attention keys/values [L x D]; cross-attention only
    nn::V query_pos;  // [T x D] progress encoding for cross-attention queries
    std::size_t prefix = 0;
    std::size_t frames = 0;
};

/// Detached copy of a Condition, reusable across graphs (sampler steps).
struct FrozenCondition {
    Tensor<float> stream, kv, query_pos;
    std::size_t prefix = 0;
    std::size_t frames = 0;
    bool has_kv = false;
};

FrozenCondition freeze(const Condition& c);
Condition thaw(nn::G& g, const FrozenCondition& f);

/// Relative-progress sinusoidal features used to pair cross-attention
/// queries (frame t of T) with keys (character l of L).
Tensor<float> progress_encoding(std::size_t n, std::size_t dim);

/// Parameters and ops that turn encoded modalities into a Condition.
struct Conditioner {
    Variant variant = Variant::cross_attention;
    nn::Linear audio_proj;       // mel -> D
    Parameter<float>* video_null = nullptr;  // [1 x D]
    Parameter<float>* text_null = nullptr;   // [1 x D]
    Parameter<float>* filler = nullptr;      // [1 x D], early fusion
    nn::Linear text_lift;        // D -> 2D, prefix
    nn::Linear out_proj;         // early: 3D -> D, prefix/xattn: 2D -> D

    static Conditioner make(ParamStore& ps, const std::string& name, Variant variant, std::size_t dim,
                            std::size_t mel_bins, Rng& rng);

    /// (1 - M) * Linear(mel), [T x D].
    nn::V audio(nn::G& g, const Tensor<float>& mel, const TemporalMask& mask) const;
    /// Learned null row repeated to T rows.
    nn::V absent_video(nn::G& g, std::size_t frames) const;
    /// Single learned null token, [1 x D].
    nn::V absent_text(nn::G& g) const;

    /// Text padded to T rows with the filler embedding, concatenated on
    /// channels and projected. Rejects L > T.
    nn::V condition_early_fusion(nn::G& g, nn::V h_av, nn::V h_text) const;
    /// Text lifted to 2D and placed before h_av; an invalid h_text means L = 0.
    Condition condition_prefix(nn::G& g, nn::V h_av, nn::V h_text) const;
    /// h_av projected to the query stream; text kept as keys/values.
    Condition condition_cross_attention(nn::G& g, nn::V h_av, nn::V h_text) const;

    /// Dispatch on `variant`.
    Condition condition(nn::G& g, nn::V h_av, nn::V h_text) const;
};

}  // namespace avdit
