#include "avdit/encoders.hpp"

#include <cmath>

#include "avdit/tensor_io.hpp"

namespace avdit {

Alphabet::Alphabet(std::string symbols) : symbols_(std::move(symbols)) {
    if (symbols_.empty()) throw InputError("alphabet is empty");
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        if (symbols_.find(symbols_[i]) != i) {
            throw InputError(std::string("alphabet repeats symbol '") + symbols_[i] + "'");
        }
    }
}

Alphabet Alphabet::standard() { return Alphabet("abcdefgh "); }

Alphabet Alphabet::parse(std::string_view text, const std::string& source) {
    std::string symbols;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.size() != 1) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": expected exactly one character per line");
        }
        symbols.push_back(line.front());
    }
    try {
        return Alphabet(std::move(symbols));
    } catch (const InputError& e) {
        throw ParseError(source + ": " + e.what());
    }
}

Alphabet Alphabet::load(const std::filesystem::path& path) { return parse(read_text_file(path), path.string()); }

std::string Alphabet::serialize() const {
    std::string out;
    for (char c : symbols_) {
        out.push_back(c);
        out.push_back('\n');
    }
    return out;
}

void Alphabet::save(const std::filesystem::path& path) const { write_text_file(path, serialize()); }

int Alphabet::id(char c) const {
    const auto pos = symbols_.find(c);
    if (pos == std::string::npos) throw InputError(std::string("character '") + c + "' is not in the alphabet");
    return static_cast<int>(pos) + 1;
}

char Alphabet::symbol(int id) const {
    if (id < 1 || id > static_cast<int>(symbols_.size())) {
        throw InputError("token id " + std::to_string(id) + " is outside the alphabet");
    }
    return symbols_[static_cast<std::size_t>(id - 1)];
}

std::vector<int> Alphabet::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(id(c));
    return ids;
}

std::string Alphabet::decode(std::span<const int> ids) const {
    std::string out;
    for (int i : ids) {
        if (i != kBlank) out.push_back(symbol(i));
    }
    return out;
}

TextEncoder TextEncoder::make(ParamStore& ps, const std::string& name, std::size_t vocab, std::size_t dim,
                              std::size_t n_blocks, Rng& rng) {
    TextEncoder e;
    e.table = &ps.add(name + ".embed", normal_init(Shape{vocab, dim}, 1.0, rng));
    for (std::size_t i = 0; i < n_blocks; ++i) {
        e.blocks.push_back(nn::ConvNeXtBlock::make(ps, name + ".block" + std::to_string(i), dim, rng));
    }
    return e;
}

nn::V TextEncoder::operator()(nn::G& g, std::span<const int> ids) const {
    if (ids.empty()) throw InputError("text encoder needs at least one character");
    const int vocab = static_cast<int>(table->value.dim(0));
    for (int id : ids) {
        if (id < 1 || id >= vocab) {
            throw InputError("text token id " + std::to_string(id) + " outside [1, " + std::to_string(vocab - 1) + "]");
        }
    }
    nn::V x = embedding(g.param(*table), ids);
    for (const auto& b : blocks) x = b(g, x);
    return x;
}

VideoEncoder VideoEncoder::make(ParamStore& ps, const std::string& name, std::size_t video_dim, std::size_t dim,
                                std::size_t heads, std::size_t ff, std::size_t n_blocks, Rng& rng) {
    VideoEncoder e;
    e.up1_w = &ps.add(name + ".up1.w", normal_init(Shape{4, video_dim, dim}, std::sqrt(1.0 / (2.0 * video_dim)), rng));
    e.up1_b = &ps.add(name + ".up1.b", Tensor<float>(Shape{dim}));
    e.up2_w = &ps.add(name + ".up2.w", normal_init(Shape{4, dim, dim}, std::sqrt(1.0 / (2.0 * dim)), rng));
    e.up2_b = &ps.add(name + ".up2.b", Tensor<float>(Shape{dim}));
    for (std::size_t i = 0; i < n_blocks; ++i) {
        e.blocks.push_back(nn::ConformerBlock::make(ps, name + ".block" + std::to_string(i), dim, heads, ff, 15, rng));
    }
    return e;
}

nn::V VideoEncoder::encode(nn::G& g, nn::V video) const {
    nn::V x = transposed_conv1d(video, g.param(*up1_w), g.param(*up1_b), 2, 1);
    x = transposed_conv1d(gelu(x), g.param(*up2_w), g.param(*up2_b), 2, 1);
    x = add(x, g.constant(nn::sinusoidal_positions(x.rows(), x.cols())));
    for (const auto& b : blocks) x = b(g, x);
    return x;
}

nn::V VideoEncoder::operator()(nn::G& g, nn::V video, std::size_t frames) const {
    return fit_length(encode(g, video), frames);
}

nn::V fit_length(nn::V x, std::size_t frames) {
    if (frames == 0) throw DimensionError("fit_length: target length must be positive");
    const std::size_t n = x.rows();
    if (n == frames) return x;
    if (n > frames) return slice_rows(x, 0, frames);
    return pad_rows(x, 0, frames - n);
}

}  // namespace avdit
