#include <gtest/gtest.h>

#include <cmath>

#include "avdit/eval.hpp"

using namespace avdit;

namespace {

Corpus small_corpus(std::size_t n, double noise = 0.2) {
    CorpusConfig c;
    c.n_utterances = n;
    c.noise = noise;
    c.seed = 11;
    return generate_corpus(c);
}

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

// One classifier fit shared by the tests below.
const EvalClassifier& fitted_classifier() {
    static const auto* c = [] {
        auto* clf = new EvalClassifier(1);
        const auto corpus = small_corpus(60);
        Rng rng(2);
        clf->fit(corpus.utterances, 600, rng);
        return clf;
    }();
    return *c;
}

}  // namespace

TEST(EditDistance, KnownCases) {
    EXPECT_EQ(edit_distance("", ""), 0u);
    EXPECT_EQ(edit_distance("abc", "abc"), 0u);
    EXPECT_EQ(edit_distance("abc", ""), 3u);
    EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
    EXPECT_EQ(edit_distance("ab cd", "abd"), 2u);
}

TEST(AlignmentMae, ForcedArithmetic) {
    const std::vector<FrameSpan> gold{{0, 10}, {10, 20}};
    EXPECT_EQ(alignment_mae_ms(gold, gold), 0.0);
    const std::vector<FrameSpan> shifted{{0, 12}, {12, 20}};
    // (0 + 2) / 2 and (2 + 0) / 2 frames -> 1 frame -> 10 ms.
    EXPECT_DOUBLE_EQ(alignment_mae_ms(shifted, gold), 10.0);
    EXPECT_THROW(alignment_mae_ms(std::vector<FrameSpan>{{0, 20}}, gold), InputError);
}

TEST(SyncProxy, CorrelationOfEnergyEnvelopes) {
    Rng rng(3);
    Tensor<float> a(Shape{30, 80});
    for (float& v : a.data()) v = static_cast<float>(rng.normal());
    EXPECT_NEAR(sync_proxy(a, a), 1.0, 1e-12);
    Tensor<float> neg = a;
    for (float& v : neg.data()) v = -v;
    EXPECT_NEAR(sync_proxy(a, neg), -1.0, 1e-12);
    EXPECT_EQ(sync_proxy(Tensor<float>(Shape{30, 80}, 1.0f), a), 0.0);
}

TEST(Tilt, RecoveredExactlyFromNoiselessGold) {
    const auto corpus = small_corpus(10, 0.0);
    for (const auto& u : corpus.utterances) {
        EXPECT_NEAR(estimate_tilt(u.mel, u.gold_spans, u.text), speaker_tilt(u.speaker_id, 4), 1e-5);
    }
}

TEST(EvalCsv, RoundTripIsBitExactAndErrorsCarryLineNumbers) {
    const std::vector<EvalRow> rows{{"cfg=5/2", 0.1 / 3, 0.25, 41.5, 0.751, 1e-17, 20}, {"gold", 0, 0, 0, 1, 0.3, 20}};
    EXPECT_EQ(parse_eval_csv(format_eval_csv(rows), "x"), rows);
    auto text = format_eval_csv(rows);
    text += "broken,row\n";
    try {
        parse_eval_csv(text, "r.csv");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("r.csv:4"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_eval_csv("nope\n", "r.csv"), ParseError);
    EXPECT_THROW(parse_eval_csv(format_eval_csv(rows) + "a,1,2,3,4,x,6\n", "r.csv"), ParseError);
}

TEST(Split, HeldOutIsTheTailAndReferencesShareSpeaker) {
    const auto corpus = small_corpus(30);
    const auto split = split_corpus(corpus, 5);
    EXPECT_EQ(split.train.size(), 25u);
    EXPECT_EQ(split.held_out.front().id, corpus.utterances[25].id);
    for (const auto& t : split.held_out) {
        const auto& ref = pick_reference(t, split.train);
        EXPECT_EQ(ref.speaker_id, t.speaker_id);
        EXPECT_NE(ref.id, t.id);
    }
    EXPECT_THROW(split_corpus(corpus, 0), InputError);
    EXPECT_THROW(split_corpus(corpus, 30), InputError);
}

TEST(Classifier, LearnsFrameLabels) {
    const auto held = small_corpus(70);
    const std::span<const SyntheticUtterance> tail(held.utterances.data() + 60, 10);
    EXPECT_GT(fitted_classifier().frame_accuracy(tail), 0.99);
}

TEST(Classifier, GoldMelsScorePerfectly) {
    const auto corpus = small_corpus(70);
    const auto split = split_corpus(corpus, 10);
    const auto row = evaluate_gold(split, fitted_classifier(), 4);
    EXPECT_EQ(row.template_cer, 0.0);
    EXPECT_EQ(row.ctc_cer, 0.0);
    EXPECT_EQ(row.align_mae_ms, 0.0);
    EXPECT_NEAR(row.sync_proxy, 1.0, 1e-12);
    EXPECT_LT(row.tilt_error, 0.05);
    EXPECT_EQ(row.n_utterances, 10u);
}

TEST(Generate, TargetLengthFollowsVideoAndReferenceIsKept) {
    const auto corpus = small_corpus(20);
    const auto split = split_corpus(corpus, 4);
    AvDiT model(tiny_model(), 5);
    Rng rng(6);
    const auto& target = split.held_out[0];
    const auto& ref = pick_reference(target, split.train);
    const auto gen = generate_for(model, target, ref, {}, {5, 2}, {.n_steps = 3}, rng);
    EXPECT_EQ(gen.target.rows(), 4 * target.video.rows());
    EXPECT_EQ(gen.full.rows(), ref.frames() + gen.target.rows());
    for (std::size_t t = 0; t < ref.frames(); ++t) {
        for (std::size_t k = 0; k < kMelBins; ++k) ASSERT_EQ(gen.full(t, k), ref.mel(t, k));
    }
    const auto text = ctc_transcript(model, gen, {});
    for (char c : text) EXPECT_NE(Alphabet::standard().id(c), 0);
}

TEST(Evaluate, ModelRowIsFiniteAndReproducible) {
    const auto corpus = small_corpus(20);
    const auto split = split_corpus(corpus, 3);
    AvDiT model(tiny_model(), 7);
    const SamplerConfig sc{.n_steps = 2};
    const auto a = evaluate_model("m", model, split, fitted_classifier(), {}, {5, 2}, sc, 4, 9);
    const auto b = evaluate_model("m", model, split, fitted_classifier(), {}, {5, 2}, sc, 4, 9);
    EXPECT_EQ(a, b);
    for (double v : {a.template_cer, a.ctc_cer, a.align_mae_ms, a.sync_proxy, a.tilt_error}) EXPECT_TRUE(std::isfinite(v));
    EXPECT_THROW(aggregate("x", {}), InputError);
}
