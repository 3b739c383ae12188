#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "avdit/corpus.hpp"
#include "avdit/dit.hpp"
#include "avdit/sampler.hpp"

namespace avdit {

/// Small frame classifier used only for measuring alignment: conv (k=3)
/// over mel, gelu, per-frame projection to the CTC vocabulary (blank
/// included but never a training target).
class EvalClassifier {
   public:
    explicit EvalClassifier(std::uint64_t seed = 0);
    EvalClassifier(const EvalClassifier&) = delete;
    EvalClassifier& operator=(const EvalClassifier&) = delete;

    /// [T x 80] -> [T x V] log-probabilities.
    Tensor<float> logprobs(const Tensor<float>& mel) const;
    /// Frame-level cross-entropy against gold span labels. Returns the final loss.
    double fit(std::span<const SyntheticUtterance> data, long steps, Rng& rng);
    /// Fraction of frames whose argmax matches the gold label.
    double frame_accuracy(std::span<const SyntheticUtterance> data) const;

    Checkpoint to_checkpoint() const { return ps_.to_checkpoint(); }
    void load(const Checkpoint& ckpt) { ps_.load(ckpt); }

   private:
    nn::V forward(nn::G& g, const Tensor<float>& mel) const;

    ParamStore ps_;
    Parameter<float>* conv_w_;
    Parameter<float>* conv_b_;
    nn::Linear head_;
};

std::size_t edit_distance(std::string_view a, std::string_view b);

/// Mean over characters of (|start - gold start| + |end - gold end|) / 2, in ms (10 ms per frame).
double alignment_mae_ms(std::span<const FrameSpan> predicted, std::span<const FrameSpan> gold);

/// Pearson correlation of per-frame mean log-mel energy. Rows beyond the
/// shorter input are ignored; a constant envelope scores 0.
double sync_proxy(const Tensor<float>& generated, const Tensor<float>& gold);

/// Least-squares slope of the residual (mel minus symbol templates on the
/// given spans), averaged over frames, against the tilt basis.
double estimate_tilt(const Tensor<float>& mel, std::span<const FrameSpan> spans, std::string_view text);

/// Scores of one generated target region against its gold utterance.
struct UtteranceScore {
    std::size_t chars = 0;
    std::size_t template_edits = 0;
    std::size_t ctc_edits = 0;
    double mae_ms = 0;
    double sync = 0;
    double tilt_error = 0;
};

/// `generated` holds at least gold.frames() rows; `ctc_text` is the CTC head transcript.
UtteranceScore score_utterance(const Tensor<float>& generated, const SyntheticUtterance& gold,
                               const std::string& ctc_text, const EvalClassifier& classifier,
                               std::size_t n_speakers);

struct EvalRow {
    std::string setting;
    double template_cer = 0;
    double ctc_cer = 0;
    double align_mae_ms = 0;
    double sync_proxy = 0;
    double tilt_error = 0;
    std::size_t n_utterances = 0;
    bool operator==(const EvalRow&) const = default;
};

EvalRow aggregate(const std::string& setting, std::span<const UtteranceScore> scores);

/// Header: setting,template_cer,ctc_cer,align_mae_ms,sync_proxy,tilt_error,n_utterances
std::string format_eval_csv(std::span<const EvalRow> rows);
std::vector<EvalRow> parse_eval_csv(std::string_view text, const std::string& source);
void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows);
std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path);

struct EvalSplit {
    std::vector<SyntheticUtterance> train;
    std::vector<SyntheticUtterance> held_out;
};

/// The last n_eval utterances are held out.
EvalSplit split_corpus(const Corpus& corpus, std::size_t n_eval);

/// Shortest training utterance by the target's speaker.
const SyntheticUtterance& pick_reference(const SyntheticUtterance& target, std::span<const SyntheticUtterance> train);

struct GeneratedUtterance {
    ReferencePair pair;
    Tensor<float> full;    // [ref + target x 80], reference rows included
    Tensor<float> target;  // [4 Tv x 80]
};

/// Samples the target region of make_reference_pair(target, reference).
GeneratedUtterance generate_for(const AvDiT& model, const SyntheticUtterance& target,
                                const SyntheticUtterance& reference, ModalityFlags flags,
                                const GuidanceScales& scales, const SamplerConfig& cfg, Rng& rng);

/// Greedy transcript of the deepest CTC head at t = 1 over the target rows.
std::string ctc_transcript(const AvDiT& model, const GeneratedUtterance& g, ModalityFlags flags);

/// Full evaluation of `held_out` (parallel over utterances, order-stable).
EvalRow evaluate_model(const std::string& setting, const AvDiT& model, const EvalSplit& split,
                       const EvalClassifier& classifier, ModalityFlags flags, const GuidanceScales& scales,
                       const SamplerConfig& cfg, std::size_t n_speakers, std::uint64_t seed);

/// The same metrics with gold mels standing in for generated ones.
EvalRow evaluate_gold(const EvalSplit& split, const EvalClassifier& classifier, std::size_t n_speakers);

}  // namespace avdit
