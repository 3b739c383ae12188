#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "avdit/harness.hpp"
#include "avdit/tensor_io.hpp"

using namespace avdit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("avdit_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// A run small enough to train in well under a second per step.
RunConfig tiny_run(const fs::path& root) {
    RunConfig c = RunConfig::from_kv({{"model.n_blocks", "2"},
                                      {"model.d_model", "16"},
                                      {"model.n_heads", "2"},
                                      {"model.d_ff", "32"},
                                      {"model.ctc_layers", "1,2"},
                                      {"model.enc_ff", "32"},
                                      {"model.text_blocks", "1"},
                                      {"model.video_blocks", "1"},
                                      {"corpus.n_utterances", "16"},
                                      {"corpus.max_seconds", "0.9"},
                                      {"eval.utterances", "3"},
                                      {"eval.classifier_steps", "50"},
                                      {"train.pretrain_steps", "4"},
                                      {"train.steps", "5"},
                                      {"sampler.n_steps", "2"},
                                      {"optim.warmup", "2"}});
    c.corpus_dir = (root / "corpus").string();
    return c;
}

}  // namespace

TEST(RunConfig, KeyValueRoundTripAndUnknownKeys) {
    RunConfig c;
    c.seed = 7;
    c.model.variant = Variant::prefix;
    c.scales = {2, 2};
    c.sample_flags.video = false;
    const auto kv = c.to_kv();
    EXPECT_EQ(RunConfig::from_kv(kv).to_kv(), kv);
    EXPECT_EQ(kv.at("variant"), "prefix");
    EXPECT_FALSE(kv.contains("model.variant"));
    EXPECT_THROW(RunConfig::from_kv({{"modle.d_model", "8"}}), InputError);
    EXPECT_THROW(RunConfig::from_kv({{"model.d_model", "eight"}}), InputError);
    EXPECT_THROW(RunConfig::from_kv({{"sampler.s_text", "-1"}}), InputError);
    EXPECT_THROW(RunConfig::from_kv({{"train.batch", "0"}}), InputError);
}

TEST(RunConfig, LoadsFileAndSnapshotReloads) {
    const auto dir = scratch("config");
    write_text_file(dir / "run.conf", "# comment\nseed=3\nvariant=early\nloss.lambda_ctc=0\n");
    const auto c = RunConfig::load(dir / "run.conf");
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.model.variant, Variant::early_fusion);
    EXPECT_EQ(c.loss.lambda_ctc, 0.0);
    write_snapshot(dir, c);
    const auto text = read_text_file(dir / "resolved.conf");
    EXPECT_EQ(text.rfind("# build " + build_id(), 0), 0u);
    EXPECT_EQ(RunConfig::load(dir / "resolved.conf").to_kv(), c.to_kv());
    write_text_file(dir / "bad.conf", "seed=1\nnot a pair\n");
    EXPECT_THROW(RunConfig::load(dir / "bad.conf"), ParseError);
    fs::remove_all(dir);
}

TEST(TrainLog, RoundTripIsBitExact) {
    const std::vector<TrainLogRow> log{{0, 1e-5, 3.25, 0.1 / 7, 3.3, 12.5}, {1, 2e-5, 2.0, 0, 2.0, 0.3}};
    EXPECT_EQ(parse_train_log(format_train_log(log), "log"), log);
    EXPECT_THROW(parse_train_log("step\n", "log"), ParseError);
    EXPECT_THROW(parse_train_log(format_train_log(log) + "2,x,1,1,1,1\n", "log"), ParseError);
}

TEST(Commands, UnknownAxisAndMissingCorpus) {
    const auto root = scratch("errors");
    RunConfig c = tiny_run(root);
    EXPECT_THROW(cmd_ablate(c, "loudness", root / "a"), UsageError);
    EXPECT_THROW(cmd_pretrain(c, root / "p"), InputError);
    c.checkpoint = (root / "nope").string();
    EXPECT_THROW(cmd_eval(c, root / "e"), InputError);
    fs::remove_all(root);
}

TEST(Commands, TinyPipelineWritesArtifactsAndIsDeterministic) {
    const auto root = scratch("pipeline");
    RunConfig c = tiny_run(root);
    cmd_gen_corpus(c, c.corpus_dir);
    EXPECT_TRUE(fs::is_directory(fs::path(c.corpus_dir) / "eval_classifier"));

    const auto pre = cmd_pretrain(c, root / "pre");
    EXPECT_EQ(pre.log.size(), 4u);
    EXPECT_TRUE(std::isfinite(pre.log.front().cfm));
    EXPECT_EQ(pre.log.front().ctc, 0.0);
    for (const char* f : {"model", "model_ema", "train_log.csv", "resolved.conf", "train_summary.conf"}) {
        EXPECT_TRUE(fs::exists(root / "pre" / f)) << f;
    }

    RunConfig t = c;
    t.init_checkpoint = (root / "pre").string();
    const auto a = cmd_train(t, root / "tr_a");
    const auto b = cmd_train(t, root / "tr_b");
    EXPECT_EQ(a.log, b.log);
    EXPECT_TRUE(std::any_of(a.log.begin(), a.log.end(), [](const TrainLogRow& r) { return r.ctc > 0; }));
    EXPECT_EQ(read_text_file(root / "tr_a" / "train_log.csv"), read_text_file(root / "tr_b" / "train_log.csv"));
    EXPECT_EQ(load_checkpoint(root / "tr_a" / "model_ema").tensors, load_checkpoint(root / "tr_b" / "model_ema").tensors);

    RunConfig wrong = t;
    wrong.model.variant = Variant::prefix;
    EXPECT_THROW(cmd_train(wrong, root / "tr_wrong"), InputError);

    RunConfig s = c;
    s.checkpoint = (root / "tr_a").string();
    const auto s1 = cmd_sample(s, root / "s1");
    const auto s2 = cmd_sample(s, root / "s2");
    const auto corpus = read_corpus(c.corpus_dir);
    const auto split = split_corpus(corpus, 3);
    EXPECT_EQ(s1.target.rows(), 4 * split.held_out[0].video.rows());
    EXPECT_EQ(read_text_file(root / "s1" / "sample.mel.adtn"), read_text_file(root / "s2" / "sample.mel.adtn"));
    EXPECT_EQ(read_tensor_as<float>(root / "s1" / "sample.mel.adtn"), s1.target);
    const auto& ref = pick_reference(split.held_out[0], split.train);
    for (std::size_t i = 0; i < ref.mel.numel(); ++i) ASSERT_EQ(s1.full[i], ref.mel[i]);

    s.sample_flags.text = false;
    EXPECT_NO_THROW(cmd_sample(s, root / "s_video_only"));

    const auto rows = cmd_eval(s, root / "ev");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].setting, "gold");
    EXPECT_EQ(read_eval_csv(root / "ev" / "eval.csv"), rows);

    const auto cfg_rows = cmd_ablate(s, "cfg", root / "ab_cfg");
    ASSERT_EQ(cfg_rows.size(), 4u);
    EXPECT_EQ(cfg_rows[0].setting, "cfg=0/0");
    EXPECT_EQ(cfg_rows[2].setting, "cfg=5/2");
    EXPECT_EQ(cmd_ablate(s, "modality", root / "ab_mod").size(), 3u);
    fs::remove_all(root);
}
