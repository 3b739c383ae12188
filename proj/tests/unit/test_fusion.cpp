#include <gtest/gtest.h>

#include "avdit/fusion.hpp"

using namespace avdit;

namespace {

Tensor<float> nonzero_features(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor<float> t(Shape{rows, cols});
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(0.5, 1.5) * (rng.bernoulli(0.5) ? 1 : -1));
    return t;
}

bool contiguous(const TemporalMask& m) {
    int runs = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] == 1.0f && (i == 0 || m[i - 1] == 0.0f)) ++runs;
    }
    return runs == 1;
}

}  // namespace

TEST(SpanMask, RatioOneIsAllOnes) {
    Rng rng(1);
    for (float v : span_mask(50, 1.0, rng)) EXPECT_EQ(v, 1.0f);
}

TEST(SpanMask, MeanCoverageNearPoint85AndAlwaysContiguous) {
    Rng rng(2);
    double coverage = 0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t frames = 60 + rng.below(141);
        const auto m = sample_span_mask(frames, rng);
        double ones = 0;
        for (float v : m) {
            EXPECT_TRUE(v == 0.0f || v == 1.0f);
            ones += v;
        }
        ASSERT_TRUE(contiguous(m));
        coverage += ones / static_cast<double>(frames);
    }
    coverage /= 10000;
    EXPECT_GE(coverage, 0.83);
    EXPECT_LE(coverage, 0.87);
}

TEST(SpanMask, TooShortIsInputError) {
    Rng rng(3);
    EXPECT_THROW(sample_span_mask(1, rng), InputError);
}

TEST(Fuse, AllZeroMaskKeepsAudioOnly) {
    Rng rng(4);
    Graph<float> g(false);
    auto a = g.constant(nonzero_features(5, 3, rng));
    auto v = g.constant(nonzero_features(5, 3, rng));
    const auto out = fuse_audio_video(a, v, TemporalMask(5, 0.0f)).value();
    for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_EQ(out(t, c), a.value()(t, c));
            EXPECT_EQ(out(t, 3 + c), 0.0f);
        }
    }
}

TEST(Fuse, AllOneMaskKeepsVideoOnly) {
    Rng rng(5);
    Graph<float> g(false);
    auto a = g.constant(nonzero_features(5, 3, rng));
    auto v = g.constant(nonzero_features(5, 3, rng));
    const auto out = fuse_audio_video(a, v, TemporalMask(5, 1.0f)).value();
    for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_EQ(out(t, c), 0.0f);
            EXPECT_EQ(out(t, 3 + c), v.value()(t, c));
        }
    }
}

TEST(Fuse, MixedMaskIsComplementaryPerFrame) {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        Graph<float> g(false);
        const std::size_t frames = 2 + rng.below(30);
        TemporalMask m(frames);
        for (float& x : m) x = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        auto a = g.constant(nonzero_features(frames, 4, rng));
        auto v = g.constant(nonzero_features(frames, 4, rng));
        const auto out = fuse_audio_video(a, v, m).value();
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t c = 0; c < 4; ++c) {
                if (m[t] == 0.0f) {
                    EXPECT_NE(out(t, c), 0.0f);
                    EXPECT_EQ(out(t, 4 + c), 0.0f);
                } else {
                    EXPECT_EQ(out(t, c), 0.0f);
                    EXPECT_NE(out(t, 4 + c), 0.0f);
                }
            }
        }
    }
}

TEST(Fuse, LengthMismatchIsDimensionError) {
    Rng rng(7);
    Graph<float> g(false);
    EXPECT_THROW(fuse_audio_video(g.constant(nonzero_features(5, 3, rng)), g.constant(nonzero_features(4, 3, rng)),
                                  TemporalMask(5, 1.0f)),
                 DimensionError);
}

class ConditionerTest : public ::testing::Test {
   protected:
    static constexpr std::size_t D = 8;
    Rng rng{11};
};

TEST_F(ConditionerTest, EarlyFusionFillsWithLearnedFiller) {
    ParamStore ps;
    auto c = Conditioner::make(ps, "c", Variant::early_fusion, D, 80, rng);
    Graph<float> g(false);
    auto h_av = g.constant(nonzero_features(10, 2 * D, rng));
    auto text = g.constant(nonzero_features(4, D, rng));
    EXPECT_EQ(c.condition_early_fusion(g, h_av, text).shape(), (Shape{10, D}));
    EXPECT_EQ(c.condition_early_fusion(g, h_av, g.constant(nonzero_features(10, D, rng))).shape(), (Shape{10, D}));
    EXPECT_THROW(c.condition_early_fusion(g, h_av, g.constant(nonzero_features(11, D, rng))), InputError);

    // Filler rows: with the projection set to pick the text channels, rows L..T-1 equal the filler.
    c.out_proj.w->value.fill(0.0f);
    for (std::size_t i = 0; i < D; ++i) c.out_proj.w->value(2 * D + i, i) = 1.0f;
    Graph<float> fresh(false);
    const auto y =
        c.condition_early_fusion(fresh, fresh.constant(h_av.value()), fresh.constant(text.value())).value();
    for (std::size_t t = 4; t < 10; ++t) {
        for (std::size_t i = 0; i < D; ++i) EXPECT_EQ(y(t, i), c.filler->value[i]);
    }
}

TEST_F(ConditionerTest, PrefixLengthIsLPlusT) {
    ParamStore ps;
    auto c = Conditioner::make(ps, "c", Variant::prefix, D, 80, rng);
    Graph<float> g(false);
    auto h_av = g.constant(nonzero_features(10, 2 * D, rng));
    for (std::size_t len : {1u, 3u, 15u}) {
        auto cond = c.condition_prefix(g, h_av, g.constant(nonzero_features(len, D, rng)));
        EXPECT_EQ(cond.stream.shape(), (Shape{len + 10, D}));
        EXPECT_EQ(cond.prefix, len);
        EXPECT_EQ(cond.frames, 10u);
    }
    auto bare = c.condition_prefix(g, h_av, Var<float>());
    EXPECT_EQ(bare.stream.rows(), 10u);
    EXPECT_EQ(bare.prefix, 0u);
}

TEST_F(ConditionerTest, CrossAttentionKeepsTextAsKeys) {
    ParamStore ps;
    auto c = Conditioner::make(ps, "c", Variant::cross_attention, D, 80, rng);
    Graph<float> g(false);
    auto h_av = g.constant(nonzero_features(10, 2 * D, rng));
    auto cond = c.condition_cross_attention(g, h_av, g.constant(nonzero_features(6, D, rng)));
    EXPECT_EQ(cond.stream.shape(), (Shape{10, D}));
    EXPECT_EQ(cond.kv.shape(), (Shape{6, D}));
    auto absent = c.condition_cross_attention(g, h_av, c.absent_text(g));
    EXPECT_EQ(absent.kv.rows(), 1u);
}

TEST(ModalityDropout, BranchContract) {
    const DropoutProbs p;
    EXPECT_EQ(modality_dropout_branch({}, 0.1, p), (ModalityFlags{false, false}));
    EXPECT_EQ(modality_dropout_branch({}, 0.3, p), (ModalityFlags{false, true}));
    EXPECT_EQ(modality_dropout_branch({}, 0.5, p), (ModalityFlags{true, false}));
    EXPECT_EQ(modality_dropout_branch({}, 0.7, p), (ModalityFlags{true, true}));
}

TEST(ModalityDropout, ZeroProbabilitiesLeaveFlagsUnchanged) {
    Rng rng(12);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(apply_modality_dropout({}, rng, {0, 0, 0}), (ModalityFlags{}));
}

TEST(ModalityDropout, EmpiricalRatesMatchConfiguration) {
    Rng rng(13);
    const DropoutProbs p;
    int both = 0, text_only = 0, video_only = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const auto f = apply_modality_dropout({}, rng, p);
        if (!f.text && !f.video) ++both;
        else if (!f.text) ++text_only;
        else if (!f.video) ++video_only;
    }
    EXPECT_NEAR(both / double(n), p.both, 0.02);
    EXPECT_NEAR(text_only / double(n), p.text, 0.02);
    EXPECT_NEAR(video_only / double(n), p.video, 0.02);
}

TEST(ModalityDropout, SeededDrawsAreReproducible) {
    Rng a(14), b(14);
    for (int i = 0; i < 500; ++i) EXPECT_EQ(apply_modality_dropout({}, a, {}), apply_modality_dropout({}, b, {}));
    EXPECT_THROW(apply_modality_dropout({}, a, {0.5, 0.5, 0.5}), InputError);
}
