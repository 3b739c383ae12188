#include "avdit/dit.hpp"

#include <algorithm>
#include <charconv>
#include <set>

namespace avdit {

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    const auto* end = value.data() + value.size();
    auto [p, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || p != end) throw InputError("model config " + key + ": expected an integer, got '" + value + "'");
    return out;
}

std::string join(const std::vector<std::size_t>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

std::vector<std::size_t> split_sizes(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= value.size()) {
        const auto comma = value.find(',', pos);
        const std::string part = value.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!part.empty()) out.push_back(parse_size(key, part));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

// Row vector [1 x n] -> [n], so it broadcasts across rows.
nn::V chunk(nn::V mod, std::size_t i, std::size_t dim) {
    return reshape(slice_cols(mod, i * dim, (i + 1) * dim), Shape{dim});
}

nn::V modulate(nn::V x, nn::V shift, nn::V scl) { return add(mul(layernorm(x), add_scalar(scl, 1.0f)), shift); }

}  // namespace

void ModelConfig::validate() const {
    if (n_blocks == 0) throw InputError("model config: n_blocks must be positive");
    if (d_model == 0 || d_model % 2 != 0) throw InputError("model config: d_model must be positive and even");
    if (n_heads == 0 || d_model % n_heads != 0) throw InputError("model config: d_model must be divisible by n_heads");
    if (enc_heads == 0 || d_model % enc_heads != 0) {
        throw InputError("model config: d_model must be divisible by enc_heads");
    }
    if (vocab_size < 2) throw InputError("model config: vocab_size must be at least 2");
    if (d_ff == 0 || enc_ff == 0 || mel_bins == 0 || video_dim == 0) {
        throw InputError("model config: widths must be positive");
    }
    std::set<std::size_t> seen;
    for (auto l : ctc_layers) {
        if (l < 1 || l > n_blocks) throw InputError("model config: ctc layer " + std::to_string(l) + " outside [1, n_blocks]");
        if (!seen.insert(l).second) throw InputError("model config: duplicate ctc layer " + std::to_string(l));
    }
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    return {
        {"variant", variant_name(variant)},
        {"n_blocks", std::to_string(n_blocks)},
        {"d_model", std::to_string(d_model)},
        {"n_heads", std::to_string(n_heads)},
        {"d_ff", std::to_string(d_ff)},
        {"ctc_layers", join(ctc_layers)},
        {"vocab_size", std::to_string(vocab_size)},
        {"mel_bins", std::to_string(mel_bins)},
        {"video_dim", std::to_string(video_dim)},
        {"enc_heads", std::to_string(enc_heads)},
        {"enc_ff", std::to_string(enc_ff)},
        {"text_blocks", std::to_string(text_blocks)},
        {"video_blocks", std::to_string(video_blocks)},
    };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "variant") c.variant = parse_variant(v);
        else if (k == "n_blocks") c.n_blocks = parse_size(k, v);
        else if (k == "d_model") c.d_model = parse_size(k, v);
        else if (k == "n_heads") c.n_heads = parse_size(k, v);
        else if (k == "d_ff") c.d_ff = parse_size(k, v);
        else if (k == "ctc_layers") c.ctc_layers = split_sizes(k, v);
        else if (k == "vocab_size") c.vocab_size = parse_size(k, v);
        else if (k == "mel_bins") c.mel_bins = parse_size(k, v);
        else if (k == "video_dim") c.video_dim = parse_size(k, v);
        else if (k == "enc_heads") c.enc_heads = parse_size(k, v);
        else if (k == "enc_ff") c.enc_ff = parse_size(k, v);
        else if (k == "text_blocks") c.text_blocks = parse_size(k, v);
        else if (k == "video_blocks") c.video_blocks = parse_size(k, v);
        else throw InputError("unknown model config key '" + k + "'");
    }
    c.validate();
    return c;
}

DiTBlock DiTBlock::make(ParamStore& ps, const std::string& name, const ModelConfig& cfg, bool cross, Rng& rng) {
    DiTBlock b;
    const std::size_t d = cfg.d_model;
    b.ada = nn::Linear::zeros(ps, name + ".ada", d, (cross ? 9 : 6) * d);
    b.self_attn = nn::Attention::make(ps, name + ".self_attn", d, cfg.n_heads, rng);
    if (cross) b.cross_attn = nn::Attention::make(ps, name + ".cross_attn", d, cfg.n_heads, rng);
    b.ff = nn::FeedForward::make(ps, name + ".ff", d, cfg.d_ff, nn::FeedForward::Act::gelu, rng);
    return b;
}

nn::V DiTBlock::operator()(nn::G& g, nn::V x, nn::V c, const Condition& cond) const {
    const std::size_t d = x.cols();
    nn::V mod = ada(g, c);
    nn::V h = modulate(x, chunk(mod, 0, d), chunk(mod, 1, d));
    x = add(x, mul(self_attn(g, h, h), chunk(mod, 2, d)));
    std::size_t next = 3;
    if (cross_attn) {
        if (!cond.kv.valid()) throw InputError("cross-attention block needs text keys/values");
        h = add(modulate(x, chunk(mod, 3, d), chunk(mod, 4, d)), cond.query_pos);
        x = add(x, mul((*cross_attn)(g, h, cond.kv), chunk(mod, 5, d)));
        next = 6;
    }
    h = modulate(x, chunk(mod, next, d), chunk(mod, next + 1, d));
    return add(x, mul(ff(g, h), chunk(mod, next + 2, d)));
}

AvDiT::AvDiT(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed, 0x6d6f64656cULL);
    const std::size_t d = cfg_.d_model;
    text_enc_ = TextEncoder::make(ps_, "text_enc", cfg_.vocab_size, d, cfg_.text_blocks, rng);
    video_enc_ = VideoEncoder::make(ps_, "video_enc", cfg_.video_dim, d, cfg_.enc_heads, cfg_.enc_ff,
                                    cfg_.video_blocks, rng);
    conditioner_ = Conditioner::make(ps_, "cond", cfg_.variant, d, cfg_.mel_bins, rng);
    x_embed_ = nn::Linear::make(ps_, "x_embed", cfg_.mel_bins, d, rng);
    t_mlp1_ = nn::Linear::make(ps_, "t_mlp1", d, d, rng);
    t_mlp2_ = nn::Linear::make(ps_, "t_mlp2", d, d, rng);
    const bool cross = cfg_.variant == Variant::cross_attention;
    for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
        blocks_.push_back(DiTBlock::make(ps_, "block" + std::to_string(i + 1), cfg_, cross, rng));
    }
    for (auto l : cfg_.ctc_layers) {
        ctc_heads_.emplace(l, nn::Linear::make(ps_, "ctc_head" + std::to_string(l), d, cfg_.vocab_size, rng));
    }
    final_ada_ = nn::Linear::zeros(ps_, "final_ada", d, 2 * d);
    out_proj_ = nn::Linear::make(ps_, "out_proj", d, cfg_.mel_bins, rng);
}

Condition AvDiT::encode_condition(nn::G& g, const ConditionInputs& in) const {
    const std::size_t frames = in.frames();
    if (frames == 0) throw InputError("conditioning needs at least one frame");
    nn::V h_audio = conditioner_.audio(g, in.mel, in.mask);

    nn::V h_video;
    if (in.flags.video) {
        if (in.video.rank() != 2 || in.video.cols() != cfg_.video_dim) {
            throw DimensionError("video features must be [Tv x " + std::to_string(cfg_.video_dim) + "], got " +
                                 shape_str(in.video.shape()));
        }
        if (in.video_offset >= frames) throw DimensionError("video offset lies beyond the conditioning length");
        h_video = video_enc_(g, g.constant(in.video), frames - in.video_offset);
        if (in.video_offset > 0) h_video = pad_rows(h_video, in.video_offset, 0);
    } else {
        h_video = conditioner_.absent_video(g, frames);
    }

    nn::V h_text = in.flags.text ? text_enc_(g, in.text) : conditioner_.absent_text(g);
    return conditioner_.condition(g, fuse_audio_video(h_audio, h_video, in.mask), h_text);
}

nn::V AvDiT::timestep_embedding(nn::G& g, double t) const {
    const double pos = 1000.0 * t;
    nn::V e = g.constant(nn::sinusoidal(std::span<const double>(&pos, 1), cfg_.d_model));
    return t_mlp2_(g, silu(t_mlp1_(g, e)));
}

ModelOutput AvDiT::forward(nn::G& g, nn::V x_t, double t, const Condition& cond) const {
    if (x_t.value().rank() != 2 || x_t.rows() != cond.frames || x_t.cols() != cfg_.mel_bins) {
        throw DimensionError("forward: x_t " + shape_str(x_t.shape()) + " does not match conditioning of " +
                             std::to_string(cond.frames) + " frames x " + std::to_string(cfg_.mel_bins));
    }
    if (cond.stream.rows() != cond.prefix + cond.frames) {
        throw DimensionError("forward: conditioning stream has " + std::to_string(cond.stream.rows()) +
                             " rows, expected prefix + frames");
    }
    const std::size_t d = cfg_.d_model;
    nn::V xe = x_embed_(g, x_t);
    if (cond.prefix > 0) xe = pad_rows(xe, cond.prefix, 0);
    nn::V x = add(add(cond.stream, xe), g.constant(nn::sinusoidal_positions(cond.prefix + cond.frames, d)));

    ModelOutput out;
    out.stream_in = x;
    nn::V c = silu(timestep_embedding(g, t));
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        x = blocks_[i](g, x, c, cond);
        auto head = ctc_heads_.find(i + 1);
        if (head != ctc_heads_.end()) {
            nn::V rows = cond.prefix > 0 ? slice_rows(x, cond.prefix, cond.prefix + cond.frames) : x;
            out.ctc_logits.emplace(i + 1, head->second(g, rows));
        }
    }
    out.stream_out = x;
    if (cond.prefix > 0) x = slice_rows(x, cond.prefix, cond.prefix + cond.frames);
    nn::V mod = final_ada_(g, c);
    out.v_pred = out_proj_(g, modulate(x, chunk(mod, 0, d), chunk(mod, 1, d)));
    return out;
}

Checkpoint AvDiT::to_checkpoint() const {
    Checkpoint c = ps_.to_checkpoint();
    for (const auto& [k, v] : cfg_.to_kv()) c.config["model." + k] = v;
    return c;
}

std::unique_ptr<AvDiT> AvDiT::from_checkpoint(const Checkpoint& ckpt) {
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : ckpt.config) {
        if (k.rfind("model.", 0) == 0) kv.emplace(k.substr(6), v);
    }
    if (kv.empty()) throw InputError("checkpoint has no model configuration");
    auto model = std::make_unique<AvDiT>(ModelConfig::from_kv(kv), 0);
    model->params().load(ckpt);
    return model;
}

}  // namespace avdit
