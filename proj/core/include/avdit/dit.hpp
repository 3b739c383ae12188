#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avdit/encoders.hpp"
#include "avdit/fusion.hpp"

namespace avdit {

struct ModelConfig {
    Variant variant = Variant::cross_attention;
    std::size_t n_blocks = 6;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::vector<std::size_t> ctc_layers{2, 4};  // 1-based block indices
    std::size_t vocab_size = 10;
    std::size_t mel_bins = 80;
    std::size_t video_dim = 16;
    std::size_t enc_heads = 2;
    std::size_t enc_ff = 128;
    std::size_t text_blocks = 4;
    std::size_t video_blocks = 2;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    /// Keys not listed in to_kv() are rejected.
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
    bool operator==(const ModelConfig&) const = default;
};

/// adaLN-Zero transformer block: self-attention, optional cross-attention,
/// feed-forward. The modulation linear starts at zero so the block is the
/// identity until trained.
struct DiTBlock {
    nn::Linear ada;
    nn::Attention self_attn;
    std::optional<nn::Attention> cross_attn;
    nn::FeedForward ff;

    static DiTBlock make(ParamStore& ps, const std::string& name, const ModelConfig& cfg, bool cross, Rng& rng);
    /// `c` is the [1 x D] conditioning row derived from the timestep.
    nn::V operator()(nn::G& g, nn::V x, nn::V c, const Condition& cond) const;
};

struct ModelOutput {
    nn::V v_pred;                             // [T x mel_bins]
    std::map<std::size_t, nn::V> ctc_logits;  // block index -> [T x V]
    nn::V stream_in;                          // backbone input
    nn::V stream_out;                         // backbone output, before the final norm
};

/// Encoders, conditioning and DiT backbone with CTC heads.
class AvDiT {
   public:
    AvDiT(const ModelConfig& cfg, std::uint64_t seed);
    AvDiT(const AvDiT&) = delete;
    AvDiT& operator=(const AvDiT&) = delete;

    const ModelConfig& config() const noexcept { return cfg_; }
    ParamStore& params() noexcept { return ps_; }
    const ParamStore& params() const noexcept { return ps_; }

    /// Encodes text/video (or their null embeddings) and fuses them with the
    /// masked reference audio.
    Condition encode_condition(nn::G& g, const ConditionInputs& in) const;

    /// Two-layer MLP over sinusoidal features of 1000 t, [1 x D].
    nn::V timestep_embedding(nn::G& g, double t) const;

    ModelOutput forward(nn::G& g, nn::V x_t, double t, const Condition& cond) const;

    /// Parameters plus the config as key=value entries.
    Checkpoint to_checkpoint() const;
    static std::unique_ptr<AvDiT> from_checkpoint(const Checkpoint& ckpt);

   private:
    ModelConfig cfg_;
    ParamStore ps_;
    TextEncoder text_enc_;
    VideoEncoder video_enc_;
    Conditioner conditioner_;
    nn::Linear x_embed_;
    nn::Linear t_mlp1_, t_mlp2_;
    std::vector<DiTBlock> blocks_;
    std::map<std::size_t, nn::Linear> ctc_heads_;
    nn::Linear final_ada_;
    nn::Linear out_proj_;
};

}  // namespace avdit
