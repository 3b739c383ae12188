// avdit: corpus generation, training, sampling, evaluation and ablations.

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>

#include "avdit/harness.hpp"
#include "avdit/kv.hpp"
#include "avdit/parallel.hpp"

namespace {

using namespace avdit;

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<long> steps;
    std::string scales;
    std::string variant;
    std::string out;
    std::string axis;
};

RunConfig resolve(const std::string& command, const Flags& f) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
    if (f.seed) {
        cfg.seed = *f.seed;
        if (command == "gen-corpus") cfg.corpus.seed = *f.seed;
    }
    if (!f.variant.empty()) cfg.model.variant = parse_variant(f.variant);
    if (!f.scales.empty()) cfg.scales = parse_scales(f.scales);
    if (f.steps) {
        if (*f.steps < 0) throw UsageError("--steps must be non-negative");
        if (command == "pretrain") cfg.pretrain_steps = *f.steps;
        else if (command == "train" || command == "ablate") cfg.train_steps = *f.steps;
        else if (command == "sample" || command == "eval") cfg.sampler.n_steps = static_cast<int>(*f.steps);
        else throw UsageError("--steps has no meaning for " + command);
    }
    return cfg;
}

void print_rows(const std::vector<EvalRow>& rows) { std::cout << format_eval_csv(rows); }

void run(const std::string& command, const Flags& f) {
    worker_threads();  // validates ADT_THREADS early
    const RunConfig cfg = resolve(command, f);
    const std::filesystem::path out = !f.out.empty() ? f.out : command == "gen-corpus" ? cfg.corpus_dir : "runs/" + command;
    if (command == "gen-corpus") {
        cmd_gen_corpus(cfg, out);
        std::cout << "corpus: " << cfg.corpus.n_utterances << " utterances in " << out.string() << "\n";
    } else if (command == "pretrain" || command == "train") {
        const auto r = command == "pretrain" ? cmd_pretrain(cfg, out) : cmd_train(cfg, out);
        std::cout << command << ": " << r.log.size() << " steps, initial cfm " << kv::format(r.initial_cfm)
                  << ", final smoothed cfm " << kv::format(r.final_cfm_smoothed) << ", run in " << out.string() << "\n";
    } else if (command == "sample") {
        const auto s = cmd_sample(cfg, out);
        std::cout << "sample: " << s.target.rows() << " frames after " << s.ref_frames << " reference frames in "
                  << out.string() << "\n";
    } else if (command == "eval") {
        print_rows(cmd_eval(cfg, out));
    } else if (command == "ablate") {
        print_rows(cmd_ablate(cfg, f.axis, out));
    }
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-visual flow-matching speech generation on a synthetic corpus"};
    app.require_subcommand(1, 1);
    Flags flags;
    const std::pair<const char*, const char*> commands[] = {
        {"gen-corpus", "write the synthetic corpus and its evaluation classifier"},
        {"pretrain", "audio-only masked-mel pretraining"},
        {"train", "multimodal training, optionally from paths.init"},
        {"sample", "generate one held-out utterance from paths.checkpoint"},
        {"eval", "score paths.checkpoint on the held-out split"},
        {"ablate", "sweep one axis and write ablate_<axis>.csv"},
    };
    for (const auto& [name, description] : commands) {
        CLI::App* sub = app.add_subcommand(name, description);
        sub->add_option("--config", flags.config, "key=value run configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", flags.seed, "run seed (also the corpus seed for gen-corpus)");
        sub->add_option("--steps", flags.steps, "optimizer steps (pretrain/train/ablate) or ODE steps (sample/eval)");
        sub->add_option("--scales", flags.scales, "guidance scales S_TEXT,S_VIDEO");
        sub->add_option("--variant", flags.variant, "conditioning variant")->check(CLI::IsMember({"early", "prefix", "xattn"}));
        sub->add_option("--out", flags.out, "output directory");
        if (std::string(name) == "ablate") {
            sub->add_option("axis", flags.axis, "conditioning | cfg | modality")->required();
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return 2;
    }
    try {
        run(app.get_subcommands().front()->get_name(), flags);
    } catch (const avdit::Error& e) {
        std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
