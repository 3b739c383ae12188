#include "avdit/nn.hpp"

#include <cmath>

namespace avdit::nn {

Tensor<float> sinusoidal(std::span<const double> positions, std::size_t dim) {
    if (dim < 2 || dim % 2 != 0) throw DimensionError("sinusoidal features need an even dim >= 2");
    if (positions.empty()) throw DimensionError("sinusoidal features need at least one position");
    const std::size_t half = dim / 2;
    Tensor<float> out(Shape{positions.size(), dim});
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t j = 0; j < half; ++j) {
            const double w = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(half));
            out(i, j) = static_cast<float>(std::sin(positions[i] * w));
            out(i, half + j) = static_cast<float>(std::cos(positions[i] * w));
        }
    }
    return out;
}

Tensor<float> sinusoidal_positions(std::size_t n, std::size_t dim, std::size_t offset) {
    std::vector<double> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<double>(i + offset);
    return sinusoidal(pos, dim);
}

Linear Linear::make(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias) {
    Linear l;
    l.w = &ps.add(name + ".w", xavier_init(in, out, Shape{in, out}, rng));
    if (bias) l.b = &ps.add(name + ".b", Tensor<float>(Shape{out}));
    return l;
}

Linear Linear::zeros(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out) {
    Linear l;
    l.w = &ps.add(name + ".w", Tensor<float>(Shape{in, out}));
    l.b = &ps.add(name + ".b", Tensor<float>(Shape{out}));
    return l;
}

V Linear::operator()(G& g, V x) const {
    V y = matmul(x, g.param(*w));
    return b ? add(y, g.param(*b)) : y;
}

LayerNorm LayerNorm::make(ParamStore& ps, const std::string& name, std::size_t dim) {
    LayerNorm n;
    n.gamma = &ps.add(name + ".gamma", Tensor<float>(Shape{dim}, 1.0f));
    n.beta = &ps.add(name + ".beta", Tensor<float>(Shape{dim}));
    return n;
}

V LayerNorm::operator()(G& g, V x) const { return add(mul(layernorm(x), g.param(*gamma)), g.param(*beta)); }

Attention Attention::make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng) {
    if (heads == 0 || dim % heads != 0) throw DimensionError("attention dim must be divisible by heads");
    Attention a;
    a.q = Linear::make(ps, name + ".q", dim, dim, rng);
    a.k = Linear::make(ps, name + ".k", dim, dim, rng);
    a.v = Linear::make(ps, name + ".v", dim, dim, rng);
    a.o = Linear::make(ps, name + ".o", dim, dim, rng);
    a.heads = heads;
    return a;
}

V Attention::operator()(G& g, V xq, V xkv) const {
    V qa = q(g, xq), ka = k(g, xkv), va = v(g, xkv);
    const std::size_t dim = qa.cols(), dh = dim / heads;
    const float inv = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<V> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        V qh = heads == 1 ? qa : slice_cols(qa, h * dh, (h + 1) * dh);
        V kh = heads == 1 ? ka : slice_cols(ka, h * dh, (h + 1) * dh);
        V vh = heads == 1 ? va : slice_cols(va, h * dh, (h + 1) * dh);
        V p = softmax(scale(matmul_nt(qh, kh), inv));
        outs.push_back(matmul(p, vh));
    }
    V cat = heads == 1 ? outs.front() : concat_cols<float>(std::span<const V>(outs));
    return o(g, cat);
}

FeedForward FeedForward::make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t hidden, Act act,
                              Rng& rng) {
    FeedForward f;
    f.up = Linear::make(ps, name + ".up", dim, hidden, rng);
    f.down = Linear::make(ps, name + ".down", hidden, dim, rng);
    f.act = act;
    return f;
}

V FeedForward::operator()(G& g, V x) const {
    V h = up(g, x);
    h = act == Act::gelu ? gelu(h) : silu(h);
    return down(g, h);
}

ConvNeXtBlock ConvNeXtBlock::make(ParamStore& ps, const std::string& name, std::size_t dim, Rng& rng) {
    ConvNeXtBlock b;
    b.dw_w = &ps.add(name + ".dw.w", normal_init(Shape{7, dim}, 1.0 / std::sqrt(7.0), rng));
    b.dw_b = &ps.add(name + ".dw.b", Tensor<float>(Shape{dim}));
    b.norm = LayerNorm::make(ps, name + ".norm", dim);
    b.expand = Linear::make(ps, name + ".expand", dim, 4 * dim, rng);
    b.project = Linear::make(ps, name + ".project", 4 * dim, dim, rng);
    return b;
}

V ConvNeXtBlock::operator()(G& g, V x) const {
    V h = depthwise_conv1d(x, g.param(*dw_w), g.param(*dw_b), 3);
    h = project(g, gelu(expand(g, norm(g, h))));
    return add(x, h);
}

ConformerBlock ConformerBlock::make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                                    std::size_t ff, std::size_t kernel, Rng& rng) {
    if (kernel % 2 == 0) throw DimensionError("conformer conv kernel must be odd");
    ConformerBlock b;
    b.ff1_norm = LayerNorm::make(ps, name + ".ff1_norm", dim);
    b.ff1 = FeedForward::make(ps, name + ".ff1", dim, ff, FeedForward::Act::silu, rng);
    b.attn_norm = LayerNorm::make(ps, name + ".attn_norm", dim);
    b.attn = Attention::make(ps, name + ".attn", dim, heads, rng);
    b.conv_norm = LayerNorm::make(ps, name + ".conv_norm", dim);
    b.conv_in = Linear::make(ps, name + ".conv_in", dim, 2 * dim, rng);
    b.dw_w = &ps.add(name + ".conv_dw.w", normal_init(Shape{kernel, dim}, 1.0 / std::sqrt(double(kernel)), rng));
    b.dw_b = &ps.add(name + ".conv_dw.b", Tensor<float>(Shape{dim}));
    b.conv_mid_norm = LayerNorm::make(ps, name + ".conv_mid_norm", dim);
    b.conv_out = Linear::make(ps, name + ".conv_out", dim, dim, rng);
    b.ff2_norm = LayerNorm::make(ps, name + ".ff2_norm", dim);
    b.ff2 = FeedForward::make(ps, name + ".ff2", dim, ff, FeedForward::Act::silu, rng);
    b.out_norm = LayerNorm::make(ps, name + ".out_norm", dim);
    return b;
}

V ConformerBlock::operator()(G& g, V x) const {
    x = add(x, scale(ff1(g, ff1_norm(g, x)), 0.5f));
    V a = attn_norm(g, x);
    x = add(x, attn(g, a, a));

    V c = conv_in(g, conv_norm(g, x));
    const std::size_t dim = x.cols();
    c = mul(slice_cols(c, 0, dim), sigmoid(slice_cols(c, dim, 2 * dim)));
    c = depthwise_conv1d(c, g.param(*dw_w), g.param(*dw_b), dw_w->value.dim(0) / 2);
    c = conv_out(g, silu(conv_mid_norm(g, c)));
    x = add(x, c);

    x = add(x, scale(ff2(g, ff2_norm(g, x)), 0.5f));
    return out_norm(g, x);
}

}  // namespace avdit::nn
