#include <gtest/gtest.h>

#include <cmath>

#include "avdit/train.hpp"

using namespace avdit;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.n_blocks = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.ctc_layers = {1, 2};
    c.enc_ff = 32;
    c.text_blocks = 1;
    c.video_blocks = 1;
    return c;
}

std::vector<SyntheticUtterance> few_utterances(std::size_t n) {
    CorpusConfig c;
    c.n_utterances = n;
    c.max_seconds = 0.9;
    c.seed = 4;
    return generate_corpus(c).utterances;
}

}  // namespace

TEST(DrawExample, AudioOnlyDropsBothModalities) {
    const auto data = few_utterances(3);
    TrainConfig cfg;
    cfg.audio_only = true;
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const auto ex = draw_example(data[i % 3], Alphabet::standard(), cfg, rng);
        EXPECT_FALSE(ex.inputs.flags.text);
        EXPECT_FALSE(ex.inputs.flags.video);
        EXPECT_EQ(ex.inputs.frames(), data[i % 3].frames());
        EXPECT_GE(ex.path.t, 0.0);
        EXPECT_LE(ex.path.t, 1.0);
    }
}

TEST(ExampleLoss, TermsPerHeadAndWeighting) {
    const auto data = few_utterances(2);
    AvDiT model(tiny_model(), 3);
    TrainConfig cfg;
    Rng rng(2);
    auto ex = draw_example(data[0], Alphabet::standard(), cfg, rng);
    ex.inputs.flags = {true, true};

    Graph<float> g;
    const auto terms = example_loss(model, g, ex, cfg);
    ASSERT_EQ(terms.ctc.size(), 2u);
    double ctc_mean = 0;
    for (const auto& c : terms.ctc) {
        EXPECT_GT(c.value()[0], 0.0f);
        ctc_mean += c.value()[0] / 2.0;
    }
    EXPECT_NEAR(terms.total.value()[0], terms.cfm.value()[0] + 0.1 * ctc_mean, 1e-4);

    TrainConfig no_ctc = cfg;
    no_ctc.loss.lambda_ctc = 0;
    Graph<float> g2;
    const auto plain = example_loss(model, g2, ex, no_ctc);
    EXPECT_TRUE(plain.ctc.empty());
    EXPECT_EQ(plain.total.value()[0], plain.cfm.value()[0]);

    auto silent = ex;
    silent.inputs.flags.text = false;
    Graph<float> g3;
    const auto no_text = example_loss(model, g3, silent, cfg);
    EXPECT_TRUE(no_text.ctc.empty());
    EXPECT_EQ(no_text.total.value()[0], no_text.cfm.value()[0]);
}

TEST(TrainModel, DeterministicAndReducesLossOnATinySet) {
    const auto data = few_utterances(2);
    TrainConfig cfg;
    cfg.steps = 150;
    cfg.audio_only = true;
    cfg.optim.warmup = 10;
    cfg.optim.lr = 3e-3;

    AvDiT a(tiny_model(), 5), b(tiny_model(), 5);
    const double before = probe_cfm_loss(a, data, cfg, 32, Rng(9));
    Ema ea(a.params()), eb(b.params());
    Rng ra(6), rb(6);
    long calls = 0;
    const auto la = train_model(a, ea, data, cfg, ra, [&](const TrainLogRow&) { ++calls; });
    const auto lb = train_model(b, eb, data, cfg, rb);
    EXPECT_EQ(calls, 150);
    ASSERT_EQ(la.size(), 150u);
    EXPECT_EQ(la, lb);
    EXPECT_EQ(la.front().step, 0);
    for (const auto& r : la) {
        EXPECT_TRUE(std::isfinite(r.total));
        EXPECT_EQ(r.ctc, 0.0);
    }
    EXPECT_LT(probe_cfm_loss(a, data, cfg, 32, Rng(9)), 0.7 * before);
}
