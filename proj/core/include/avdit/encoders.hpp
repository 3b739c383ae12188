#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "avdit/nn.hpp"

namespace avdit {

inline constexpr int kBlank = 0;

/// Character inventory. Symbol i (0-based line index) has token id i + 1;
/// id 0 is the CTC blank.
class Alphabet {
   public:
    /// Eight letters a-h and space.
    static Alphabet standard();
    /// One character per line.
    static Alphabet parse(std::string_view text, const std::string& source = "alphabet");
    static Alphabet load(const std::filesystem::path& path);

    std::string serialize() const;
    void save(const std::filesystem::path& path) const;

    /// Symbols plus blank.
    std::size_t vocab_size() const noexcept { return symbols_.size() + 1; }
    const std::string& symbols() const noexcept { return symbols_; }

    int id(char c) const;
    char symbol(int id) const;
    std::vector<int> encode(std::string_view text) const;
    /// Blank ids are skipped.
    std::string decode(std::span<const int> ids) const;

   private:
    explicit Alphabet(std::string symbols);
    std::string symbols_;
};

/// Embedding lookup followed by ConvNeXt blocks; no positional encoding.
struct TextEncoder {
    Parameter<float>* table = nullptr;
    std::vector<nn::ConvNeXtBlock> blocks;

    static TextEncoder make(ParamStore& ps, const std::string& name, std::size_t vocab, std::size_t dim,
                            std::size_t n_blocks, Rng& rng);
    /// ids in [1, V-1], at least one. Returns [L x D].
    nn::V operator()(nn::G& g, std::span<const int> ids) const;
};

/// Two stride-2 transposed convs (25 -> 100 fps), sinusoidal positions,
/// then Conformer blocks.
struct VideoEncoder {
    Parameter<float>* up1_w = nullptr;
    Parameter<float>* up1_b = nullptr;
    Parameter<float>* up2_w = nullptr;
    Parameter<float>* up2_b = nullptr;
    std::vector<nn::ConformerBlock> blocks;

    static VideoEncoder make(ParamStore& ps, const std::string& name, std::size_t video_dim, std::size_t dim,
                             std::size_t heads, std::size_t ff, std::size_t n_blocks, Rng& rng);

    /// [Tv x Dv] -> [4 Tv x D].
    nn::V encode(nn::G& g, nn::V video) const;
    /// encode() trimmed or zero-padded at the end to `frames` rows.
    nn::V operator()(nn::G& g, nn::V video, std::size_t frames) const;
};

/// Trims or zero-pads (at the end) a [n x D] stream to `frames` rows.
nn::V fit_length(nn::V x, std::size_t frames);

}  // namespace avdit
