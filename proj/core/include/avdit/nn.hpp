#pragma once

#include <string>

#include "avdit/autodiff.hpp"
#include "avdit/optim.hpp"

namespace avdit::nn {

using G = Graph<float>;
using V = Var<float>;

/// Sinusoidal features: row i = [sin(p_i w_0..w_{h-1}), cos(p_i w_0..w_{h-1})], w_j = 10000^(-j/h).
Tensor<float> sinusoidal(std::span<const double> positions, std::size_t dim);
/// Rows 0..n-1 at integer positions.
Tensor<float> sinusoidal_positions(std::size_t n, std::size_t dim, std::size_t offset = 0);

/// y = x W + b, W [in x out].
struct Linear {
    Parameter<float>* w = nullptr;
    Parameter<float>* b = nullptr;

    static Linear make(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool bias = true);
    /// All-zero weights and bias.
    static Linear zeros(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out);
    V operator()(G& g, V x) const;
};

/// layernorm followed by a learned per-channel gain and shift.
struct LayerNorm {
    Parameter<float>* gamma = nullptr;
    Parameter<float>* beta = nullptr;

    static LayerNorm make(ParamStore& ps, const std::string& name, std::size_t dim);
    V operator()(G& g, V x) const;
};

struct Attention {
    Linear q, k, v, o;
    std::size_t heads = 1;

    static Attention make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);
    /// Queries from `xq` [n x D], keys/values from `xkv` [m x D].
    V operator()(G& g, V xq, V xkv) const;
};

struct FeedForward {
    Linear up, down;
    enum class Act { gelu, silu } act = Act::gelu;

    static FeedForward make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t hidden, Act act,
                            Rng& rng);
    V operator()(G& g, V x) const;
};

/// Depthwise conv (K=7) -> layernorm -> 4x pointwise expand -> gelu -> project -> residual.
struct ConvNeXtBlock {
    Parameter<float>* dw_w = nullptr;
    Parameter<float>* dw_b = nullptr;
    LayerNorm norm;
    Linear expand, project;

    static ConvNeXtBlock make(ParamStore& ps, const std::string& name, std::size_t dim, Rng& rng);
    V operator()(G& g, V x) const;
};

/// Half-step FF, self-attention, conv module, half-step FF, final layernorm.
/// The conv module uses layernorm where the original uses batch norm.
struct ConformerBlock {
    LayerNorm ff1_norm, attn_norm, conv_norm, ff2_norm, out_norm, conv_mid_norm;
    FeedForward ff1, ff2;
    Attention attn;
    Linear conv_in, conv_out;
    Parameter<float>* dw_w = nullptr;
    Parameter<float>* dw_b = nullptr;

    static ConformerBlock make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                               std::size_t ff, std::size_t kernel, Rng& rng);
    V operator()(G& g, V x) const;
};

}  // namespace avdit::nn
