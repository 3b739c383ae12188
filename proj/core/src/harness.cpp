#include "avdit/harness.hpp"

#include <sstream>

#include "avdit/kv.hpp"
#include "avdit/tensor_io.hpp"

#ifndef AVDIT_BUILD_ID
#define AVDIT_BUILD_ID "unknown"
#endif

namespace avdit {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTrainLogHeader = "step,lr,cfm,ctc,total,grad_norm";

std::map<std::string, std::string> with_prefix(const std::string& prefix, const std::map<std::string, std::string>& kv) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : kv) out[prefix + k] = v;
    return out;
}

fs::path require_dir(const std::string& path, const char* what) {
    if (path.empty()) throw InputError(std::string(what) + " path is not set");
    if (!fs::is_directory(path)) throw InputError(std::string(what) + " not found: " + path);
    return path;
}

void save_run(const fs::path& out, const AvDiT& model, const Ema& ema, const std::vector<TrainLogRow>& log) {
    save_checkpoint(out / "model", model.to_checkpoint());
    Checkpoint shadow = model.to_checkpoint();
    for (auto& [name, tensor] : shadow.tensors) tensor = ema.shadow().at(name);
    save_checkpoint(out / "model_ema", shadow);
    write_text_file(out / "train_log.csv", format_train_log(log));
}

double tail_mean_cfm(const std::vector<TrainLogRow>& log, std::size_t window) {
    if (log.empty()) return 0.0;
    const std::size_t n = std::min(window, log.size());
    double s = 0;
    for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].cfm;
    return s / static_cast<double>(n);
}

TrainOutcome run_training(const RunConfig& cfg, const fs::path& out, const TrainConfig& tcfg,
                          std::unique_ptr<AvDiT> model) {
    const Corpus corpus = read_corpus(require_dir(cfg.corpus_dir, "corpus"));
    const EvalSplit split = split_corpus(corpus, cfg.eval_utterances);
    fs::create_directories(out);
    write_snapshot(out, cfg);
    TrainOutcome r;
    r.initial_cfm = probe_cfm_loss(*model, split.train, tcfg, 32, Rng(cfg.seed, 0x70726f6265));
    Ema ema(model->params());
    Rng rng(cfg.seed, 0x747261696e);
    r.log = train_model(*model, ema, split.train, tcfg, rng);
    r.final_cfm_smoothed = tail_mean_cfm(r.log, 100);
    save_run(out, *model, ema, r.log);
    write_text_file(out / "train_summary.conf",
                    format_key_values({{"initial_cfm", kv::format(r.initial_cfm)},
                                       {"final_cfm_smoothed", kv::format(r.final_cfm_smoothed)},
                                       {"steps", std::to_string(r.log.size())}}));
    return r;
}

std::string scales_name(const GuidanceScales& s) { return "cfg=" + kv::format(s.text) + "/" + kv::format(s.video); }

}  // namespace

std::map<std::string, std::string> RunConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(seed);
    auto model_kv = model.to_kv();
    kv["variant"] = model_kv.at("variant");
    model_kv.erase("variant");
    kv.merge(with_prefix("model.", model_kv));
    kv.merge(with_prefix("corpus.", corpus.to_kv()));
    kv["loss.lambda_ctc"] = kv::format(loss.lambda_ctc);
    kv["sampler.n_steps"] = std::to_string(sampler.n_steps);
    kv["sampler.sway_coeff"] = kv::format(sampler.sway_coeff);
    kv["sampler.ema_decay"] = kv::format(sampler.ema_decay);
    kv["sampler.use_ema"] = kv::format(sampler.use_ema);
    kv["sampler.s_text"] = kv::format(scales.text);
    kv["sampler.s_video"] = kv::format(scales.video);
    kv["optim.lr"] = kv::format(optim.lr);
    kv["optim.warmup"] = std::to_string(optim.warmup);
    kv["optim.weight_decay"] = kv::format(optim.weight_decay);
    kv["optim.clip"] = kv::format(optim.clip);
    kv["train.pretrain_steps"] = std::to_string(pretrain_steps);
    kv["train.steps"] = std::to_string(train_steps);
    kv["train.batch"] = std::to_string(batch);
    kv["train.dropout_text"] = kv::format(dropout.text);
    kv["train.dropout_video"] = kv::format(dropout.video);
    kv["train.dropout_both"] = kv::format(dropout.both);
    kv["eval.utterances"] = std::to_string(eval_utterances);
    kv["eval.classifier_steps"] = std::to_string(classifier_steps);
    kv["paths.corpus"] = corpus_dir;
    kv["paths.init"] = init_checkpoint;
    kv["paths.checkpoint"] = checkpoint;
    kv["sample.target"] = std::to_string(sample_target);
    kv["sample.text"] = kv::format(sample_flags.text);
    kv["sample.video"] = kv::format(sample_flags.video);
    return kv;
}

RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
    RunConfig c;
    auto model_kv = c.model.to_kv();
    auto corpus_kv = c.corpus.to_kv();
    for (const auto& [k, v] : kv) {
        if (k.rfind("model.", 0) == 0 && k != "model.variant") model_kv[k.substr(6)] = v;
        else if (k.rfind("corpus.", 0) == 0) corpus_kv[k.substr(7)] = v;
        else if (k == "variant") model_kv["variant"] = v;
        else if (k == "seed") c.seed = kv::parse_size(k, v);
        else if (k == "loss.lambda_ctc") c.loss.lambda_ctc = kv::parse_double(k, v);
        else if (k == "sampler.n_steps") c.sampler.n_steps = static_cast<int>(kv::parse_int(k, v));
        else if (k == "sampler.sway_coeff") c.sampler.sway_coeff = kv::parse_double(k, v);
        else if (k == "sampler.ema_decay") c.sampler.ema_decay = kv::parse_double(k, v);
        else if (k == "sampler.use_ema") c.sampler.use_ema = kv::parse_bool(k, v);
        else if (k == "sampler.s_text") c.scales.text = kv::parse_double(k, v);
        else if (k == "sampler.s_video") c.scales.video = kv::parse_double(k, v);
        else if (k == "optim.lr") c.optim.lr = kv::parse_double(k, v);
        else if (k == "optim.warmup") c.optim.warmup = kv::parse_int(k, v);
        else if (k == "optim.weight_decay") c.optim.weight_decay = kv::parse_double(k, v);
        else if (k == "optim.clip") c.optim.clip = kv::parse_double(k, v);
        else if (k == "train.pretrain_steps") c.pretrain_steps = kv::parse_int(k, v);
        else if (k == "train.steps") c.train_steps = kv::parse_int(k, v);
        else if (k == "train.batch") c.batch = kv::parse_size(k, v);
        else if (k == "train.dropout_text") c.dropout.text = kv::parse_double(k, v);
        else if (k == "train.dropout_video") c.dropout.video = kv::parse_double(k, v);
        else if (k == "train.dropout_both") c.dropout.both = kv::parse_double(k, v);
        else if (k == "eval.utterances") c.eval_utterances = kv::parse_size(k, v);
        else if (k == "eval.classifier_steps") c.classifier_steps = kv::parse_int(k, v);
        else if (k == "paths.corpus") c.corpus_dir = v;
        else if (k == "paths.init") c.init_checkpoint = v;
        else if (k == "paths.checkpoint") c.checkpoint = v;
        else if (k == "sample.target") c.sample_target = kv::parse_size(k, v);
        else if (k == "sample.text") c.sample_flags.text = kv::parse_bool(k, v);
        else if (k == "sample.video") c.sample_flags.video = kv::parse_bool(k, v);
        else throw InputError("unknown config key '" + k + "'");
    }
    c.model = ModelConfig::from_kv(model_kv);
    c.corpus = CorpusConfig::from_kv(corpus_kv);
    c.sampler.validate();
    c.scales.validate();
    if (c.loss.lambda_ctc < 0) throw InputError("loss.lambda_ctc must be non-negative");
    if (c.optim.lr <= 0 || c.optim.warmup < 0 || c.optim.clip <= 0 || c.optim.weight_decay < 0) {
        throw InputError("optimizer settings out of range");
    }
    if (c.pretrain_steps < 0 || c.train_steps < 0 || c.batch < 1 || c.classifier_steps < 1) {
        throw InputError("step counts must be non-negative and batch positive");
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    return from_kv(parse_key_values(read_text_file(path), path.string()));
}

TrainConfig RunConfig::pretrain_config() const {
    TrainConfig t = train_config();
    t.steps = pretrain_steps;
    t.audio_only = true;
    return t;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.steps = train_steps;
    t.batch = batch;
    t.dropout = dropout;
    t.loss = loss;
    t.optim = optim;
    t.ema_decay = sampler.ema_decay;
    return t;
}

std::string build_id() { return AVDIT_BUILD_ID; }

void write_snapshot(const fs::path& out, const RunConfig& cfg) {
    fs::create_directories(out);
    write_text_file(out / "resolved.conf", "# build " + build_id() + "\n" + format_key_values(cfg.to_kv()));
}

std::string format_train_log(const std::vector<TrainLogRow>& log) {
    std::string out = std::string(kTrainLogHeader) + "\n";
    for (const auto& r : log) {
        out += std::to_string(r.step) + "," + kv::format(r.lr) + "," + kv::format(r.cfm) + "," + kv::format(r.ctc) + "," +
               kv::format(r.total) + "," + kv::format(r.grad_norm) + "\n";
    }
    return out;
}

std::vector<TrainLogRow> parse_train_log(std::string_view text, const std::string& source) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kTrainLogHeader) throw ParseError(source + ":1: missing or wrong header");
    std::vector<TrainLogRow> rows;
    for (std::size_t n = 2; std::getline(in, line); ++n) {
        std::vector<std::string> f;
        std::istringstream fields(line);
        for (std::string x; std::getline(fields, x, ',');) f.push_back(x);
        const std::string where = source + ":" + std::to_string(n);
        if (f.size() != 6) throw ParseError(where + ": expected 6 fields");
        try {
            rows.push_back({kv::parse_int("step", f[0]), kv::parse_double("lr", f[1]), kv::parse_double("cfm", f[2]),
                            kv::parse_double("ctc", f[3]), kv::parse_double("total", f[4]),
                            kv::parse_double("grad_norm", f[5])});
        } catch (const InputError& e) {
            throw ParseError(where + ": " + e.what());
        }
    }
    return rows;
}

void cmd_gen_corpus(const RunConfig& cfg, const fs::path& out) {
    const Corpus corpus = generate_corpus(cfg.corpus);
    write_corpus(out, corpus);
    write_snapshot(out, cfg);
    const EvalSplit split = split_corpus(corpus, cfg.eval_utterances);
    EvalClassifier classifier(cfg.seed);
    Rng rng(cfg.seed, 0x636c6669);
    classifier.fit(split.train, cfg.classifier_steps, rng);
    save_checkpoint(out / "eval_classifier", classifier.to_checkpoint());
}

TrainOutcome cmd_pretrain(const RunConfig& cfg, const fs::path& out) {
    return run_training(cfg, out, cfg.pretrain_config(), std::make_unique<AvDiT>(cfg.model, cfg.seed));
}

TrainOutcome cmd_train(const RunConfig& cfg, const fs::path& out) {
    auto model = std::make_unique<AvDiT>(cfg.model, cfg.seed);
    if (!cfg.init_checkpoint.empty()) {
        const Checkpoint init = load_checkpoint(require_dir(cfg.init_checkpoint, "init checkpoint") / "model");
        auto loaded = AvDiT::from_checkpoint(init);
        if (!(loaded->config() == cfg.model)) {
            throw InputError("init checkpoint was trained with a different model config (variant " +
                             variant_name(loaded->config().variant) + ", run wants " + variant_name(cfg.model.variant) +
                             ")");
        }
        model = std::move(loaded);
    }
    return run_training(cfg, out, cfg.train_config(), std::move(model));
}

std::unique_ptr<AvDiT> load_run_model(const fs::path& run, bool use_ema) {
    return AvDiT::from_checkpoint(load_checkpoint(run / (use_ema ? "model_ema" : "model")));
}

EvalAssets load_eval_assets(const RunConfig& cfg) {
    EvalAssets a;
    const fs::path dir = require_dir(cfg.corpus_dir, "corpus");
    a.corpus = read_corpus(dir);
    a.split = split_corpus(a.corpus, cfg.eval_utterances);
    a.classifier = std::make_unique<EvalClassifier>(cfg.seed);
    if (fs::exists(dir / "eval_classifier")) {
        a.classifier->load(load_checkpoint(dir / "eval_classifier"));
    } else {
        Rng rng(cfg.seed, 0x636c6669);
        a.classifier->fit(a.split.train, cfg.classifier_steps, rng);
        save_checkpoint(dir / "eval_classifier", a.classifier->to_checkpoint());
    }
    return a;
}

SampleOutput cmd_sample(const RunConfig& cfg, const fs::path& out) {
    const auto model = load_run_model(require_dir(cfg.checkpoint, "checkpoint"), cfg.sampler.use_ema);
    const Corpus corpus = read_corpus(require_dir(cfg.corpus_dir, "corpus"));
    const EvalSplit split = split_corpus(corpus, cfg.eval_utterances);
    if (cfg.sample_target >= split.held_out.size()) throw InputError("sample.target is outside the held-out split");
    const auto& target = split.held_out[cfg.sample_target];
    Rng rng(cfg.seed, 0x73616d70);
    const auto gen = generate_for(*model, target, pick_reference(target, split.train), cfg.sample_flags, cfg.scales,
                                  cfg.sampler, rng);
    fs::create_directories(out);
    write_snapshot(out, cfg);
    write_tensor(out / "sample.mel.adtn", gen.target);
    write_tensor(out / "context.mel.adtn", gen.full);
    std::string csv = "frame";
    for (std::size_t k = 0; k < kMelBins; ++k) csv += ",m" + std::to_string(k);
    csv += "\n";
    for (std::size_t t = 0; t < gen.target.rows(); ++t) {
        csv += std::to_string(t);
        for (std::size_t k = 0; k < kMelBins; ++k) csv += "," + kv::format(static_cast<double>(gen.target(t, k)));
        csv += "\n";
    }
    write_text_file(out / "sample.csv", csv);
    return {gen.target, gen.full, gen.pair.ref_frames};
}

std::vector<EvalRow> cmd_eval(const RunConfig& cfg, const fs::path& out) {
    const auto model = load_run_model(require_dir(cfg.checkpoint, "checkpoint"), cfg.sampler.use_ema);
    const EvalAssets assets = load_eval_assets(cfg);
    std::vector<EvalRow> rows{
        evaluate_gold(assets.split, *assets.classifier, cfg.corpus.n_speakers),
        evaluate_model(scales_name(cfg.scales), *model, assets.split, *assets.classifier, {}, cfg.scales, cfg.sampler,
                       cfg.corpus.n_speakers, cfg.seed)};
    fs::create_directories(out);
    write_snapshot(out, cfg);
    write_eval_csv(out / "eval.csv", rows);
    return rows;
}

std::vector<EvalRow> cmd_ablate(const RunConfig& cfg, const std::string& axis, const fs::path& out) {
    if (axis != "conditioning" && axis != "cfg" && axis != "modality") {
        throw UsageError("unknown ablation axis '" + axis + "' (expected conditioning, cfg or modality)");
    }
    fs::create_directories(out);
    write_snapshot(out, cfg);
    const EvalAssets assets = load_eval_assets(cfg);
    std::vector<EvalRow> rows;
    auto evaluate = [&](const std::string& name, const AvDiT& m, ModalityFlags flags, const GuidanceScales& s) {
        rows.push_back(evaluate_model(name, m, assets.split, *assets.classifier, flags, s, cfg.sampler,
                                      cfg.corpus.n_speakers, cfg.seed));
    };

    if (axis == "conditioning") {
        for (Variant v : {Variant::early_fusion, Variant::prefix, Variant::cross_attention}) {
            RunConfig vc = cfg;
            vc.model.variant = v;
            const fs::path pre = out / (variant_name(v) + "_pretrain");
            cmd_pretrain(vc, pre);
            for (bool ctc : {true, false}) {
                RunConfig tc = vc;
                tc.init_checkpoint = pre.string();
                if (!ctc) tc.loss.lambda_ctc = 0.0;
                const std::string name = variant_name(v) + (ctc ? "+ctc" : "-ctc");
                cmd_train(tc, out / name);
                evaluate(name, *load_run_model(out / name, cfg.sampler.use_ema), {}, cfg.scales);
            }
        }
    } else {
        fs::path run = cfg.checkpoint;
        if (run.empty()) {
            run = out / "model_run";
            RunConfig pc = cfg;
            cmd_pretrain(pc, out / "model_pretrain");
            pc.init_checkpoint = (out / "model_pretrain").string();
            cmd_train(pc, run);
        }
        const auto model = load_run_model(require_dir(run.string(), "checkpoint"), cfg.sampler.use_ema);
        if (axis == "cfg") {
            for (GuidanceScales s : {GuidanceScales{0, 0}, GuidanceScales{2, 2}, GuidanceScales{5, 2}, GuidanceScales{5, 5}}) {
                evaluate(scales_name(s), *model, {}, s);
            }
        } else {
            evaluate("text_only", *model, {true, false}, cfg.scales);
            evaluate("video_only", *model, {false, true}, cfg.scales);
            evaluate("text+video", *model, {true, true}, cfg.scales);
        }
    }
    write_eval_csv(out / ("ablate_" + axis + ".csv"), rows);
    return rows;
}

}  // namespace avdit
