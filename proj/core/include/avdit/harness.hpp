#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avdit/eval.hpp"
#include "avdit/train.hpp"

namespace avdit {

/// Everything a command needs, as one flat key=value file with dotted
/// sections (model., loss., sampler., corpus., optim., train., eval., paths.)
/// plus top-level seed and variant. Unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    LossConfig loss;
    SamplerConfig sampler;
    GuidanceScales scales;
    CorpusConfig corpus;
    OptimConfig optim;
    long pretrain_steps = 2000;
    long train_steps = 5000;
    std::size_t batch = 4;
    DropoutProbs dropout;
    std::size_t eval_utterances = 20;
    long classifier_steps = 1500;
    std::string corpus_dir = "corpus";
    std::string init_checkpoint;  // optional
    std::string checkpoint;       // run directory to evaluate or sample from
    std::size_t sample_target = 0;  // index within the held-out split
    ModalityFlags sample_flags;

    std::map<std::string, std::string> to_kv() const;
    /// Starts from the defaults and applies `kv`.
    static RunConfig from_kv(const std::map<std::string, std::string>& kv);
    static RunConfig load(const std::filesystem::path& path);

    TrainConfig pretrain_config() const;
    TrainConfig train_config() const;
};

/// git-describe-style identifier baked in at configure time.
std::string build_id();

/// Writes resolved.conf (the full config, build id as a comment) into `out`.
void write_snapshot(const std::filesystem::path& out, const RunConfig& cfg);

struct TrainOutcome {
    std::vector<TrainLogRow> log;
    double initial_cfm = 0;       // probe loss of the starting weights
    double final_cfm_smoothed = 0;  // mean of the last 100 logged CFM losses
};

std::string format_train_log(const std::vector<TrainLogRow>& log);
std::vector<TrainLogRow> parse_train_log(std::string_view text, const std::string& source);

/// Writes the corpus and a fitted evaluation classifier (under eval_classifier/) to `out`.
void cmd_gen_corpus(const RunConfig& cfg, const std::filesystem::path& out);

/// Audio-only CFM training from scratch. Writes model/, model_ema/, train_log.csv.
TrainOutcome cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& out);

/// Multimodal training, initialised from cfg.init_checkpoint when set.
TrainOutcome cmd_train(const RunConfig& cfg, const std::filesystem::path& out);

/// Generates held-out utterance cfg.sample_target with the checkpoint's
/// weights. Writes sample.mel.adtn (target region), context.mel.adtn
/// (reference + target) and sample.csv.
struct SampleOutput {
    Tensor<float> target;
    Tensor<float> full;
    std::size_t ref_frames = 0;
};
SampleOutput cmd_sample(const RunConfig& cfg, const std::filesystem::path& out);

/// Gold and model rows for the held-out split. Writes eval.csv.
std::vector<EvalRow> cmd_eval(const RunConfig& cfg, const std::filesystem::path& out);

/// axis: conditioning (6 rows), cfg (4 rows) or modality (3 rows). Writes ablate_<axis>.csv.
std::vector<EvalRow> cmd_ablate(const RunConfig& cfg, const std::string& axis, const std::filesystem::path& out);

/// Loads <run>/model_ema (or <run>/model when use_ema is off).
std::unique_ptr<AvDiT> load_run_model(const std::filesystem::path& run, bool use_ema);

/// Corpus plus the evaluation classifier, fitting and caching the classifier if absent.
struct EvalAssets {
    Corpus corpus;
    EvalSplit split;
    std::unique_ptr<EvalClassifier> classifier;
};
EvalAssets load_eval_assets(const RunConfig& cfg);

}  // namespace avdit
