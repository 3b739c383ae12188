#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "avdit/audio.hpp"
#include "avdit/encoders.hpp"
#include "avdit/fusion.hpp"
#include "avdit/objectives.hpp"

namespace avdit {

inline constexpr std::size_t kVideoDim = 16;
inline constexpr std::size_t kVideoStride = 4;  // mel frames per video frame

struct CorpusConfig {
    std::size_t n_utterances = 400;
    double min_seconds = 0.6;
    double max_seconds = 2.0;
    std::size_t n_speakers = 4;
    double noise = 0.2;        // mel noise stddev
    double video_noise = 0.1;  // video noise stddev
    std::uint64_t seed = 0;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    static CorpusConfig from_kv(const std::map<std::string, std::string>& kv);
    bool operator==(const CorpusConfig&) const = default;
};

struct SyntheticUtterance {
    std::string id;
    std::string text;
    int speaker_id = 0;
    Tensor<float> mel;    // [T x 80]
    Tensor<float> video;  // [ceil(T/4) x 16]
    std::vector<FrameSpan> gold_spans;  // one per character, tiling [0, T)

    std::size_t frames() const { return mel.rows(); }
    bool operator==(const SyntheticUtterance&) const = default;
};

struct Corpus {
    CorpusConfig config;
    std::vector<SyntheticUtterance> utterances;
    bool operator==(const Corpus&) const = default;
};

/// Fixed log-mel pattern of each symbol of the standard alphabet (80 bins).
const std::vector<float>& symbol_template(char c);
/// Spectral tilt added to every frame of a speaker: tilt * (k / 79 - 0.5) on bin k.
double speaker_tilt(int speaker_id, std::size_t n_speakers);
/// Tilt basis (k / 79 - 0.5) on bin k.
double tilt_basis(std::size_t bin);

/// Video channel layout: 0..4 viseme group one-hot (letter pairs ab, cd, ef,
/// gh, then space), 5 onset indicator, the rest noise only.
std::size_t viseme_group(char c);

SyntheticUtterance generate_utterance(const CorpusConfig& cfg, std::size_t index, Rng& rng);
/// Utterance i draws from the stream rng(seed).fork(i).
Corpus generate_corpus(const CorpusConfig& cfg);

/// Nearest symbol template per span after removing each span mean's best
/// affine trend over bins (which absorbs level and speaker tilt).
std::string template_decode(const Tensor<float>& mel, std::span<const FrameSpan> spans);

/// Inference bundle: reference utterance as unmasked prefix, target
/// duration and video from the target utterance.
struct ReferencePair {
    ConditionInputs inputs;  // mel = [reference ; zeros], mask 0 then 1
    std::string text;        // reference text + " " + target text
    std::size_t ref_frames = 0;
    std::size_t target_frames = 0;
};

ReferencePair make_reference_pair(const SyntheticUtterance& target, const SyntheticUtterance& reference,
                                  const Alphabet& alphabet);

/// Directory layout: corpus.conf (key=value), index.jsonl (one object per
/// utterance), and <id>.mel.adtn / <id>.video.adtn tensor files.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace avdit
