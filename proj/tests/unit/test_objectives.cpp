#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "avdit/objectives.hpp"
#include "ctc_oracle.hpp"
#include "gradcheck.hpp"

using namespace avdit;
using avdit::testing::gradcheck;
using avdit::testing::make_op;
using avdit::testing::random_tensor;
using namespace avdit::testing::ctc_oracle;

TEST(OTPath, EndpointsAndVelocity) {
    Rng rng(1);
    Tensor<float> x1(Shape{4, 80}), x0(Shape{4, 80});
    for (float& v : x1.data()) v = static_cast<float>(rng.normal());
    for (float& v : x0.data()) v = static_cast<float>(rng.normal());
    EXPECT_EQ(ot_path_at(x1, x0, 0.0).xt, x0);
    EXPECT_EQ(ot_path_at(x1, x0, 1.0).xt, x1);
    const auto mid = ot_path_at(x1, x0, 0.25);
    for (std::size_t i = 0; i < x1.numel(); ++i) {
        EXPECT_NEAR(mid.xt[i], 0.75 * x0[i] + 0.25 * x1[i], 1e-6);
        EXPECT_EQ(mid.ut[i], x1[i] - x0[i]);
    }
}

TEST(OTPath, SampledNoiseAndTimeAreInRange) {
    Rng rng(2);
    Tensor<float> x1(Shape{50, 80}, 1.0f);
    double mean_t = 0.0, sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < 200; ++i) {
        const auto s = ot_path_sample(x1, rng);
        ASSERT_GE(s.t, 0.0);
        ASSERT_LE(s.t, 1.0);
        mean_t += s.t / 200;
        for (float v : s.x0.data()) {
            sum += v;
            sum2 += double(v) * v;
        }
    }
    const double n = 200.0 * 50 * 80;
    EXPECT_NEAR(mean_t, 0.5, 0.06);
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sum2 / n, 1.0, 0.01);
    x1[3] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(ot_path_sample(x1, rng), InputError);
}

TEST(CfmLoss, MatchesScalarLoopOverMaskedRows) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<float> v(Shape{4, 80}), u(Shape{4, 80});
        for (float& x : v.data()) x = static_cast<float>(rng.normal());
        for (float& x : u.data()) x = static_cast<float>(rng.normal());
        TemporalMask m(4, 0.0f);
        m[rng.below(4)] = 1.0f;
        for (float& x : m) x = rng.bernoulli(0.5) ? 1.0f : x;
        double ref = 0.0, rows = 0.0;
        for (std::size_t t = 0; t < 4; ++t) {
            if (m[t] == 0.0f) continue;
            rows += 1;
            for (std::size_t c = 0; c < 80; ++c) ref += (double(v(t, c)) - u(t, c)) * (double(v(t, c)) - u(t, c));
        }
        ref /= rows * 80;
        Graph<float> g(false);
        const double got = cfm_loss(g.constant(v), u, m).value()[0];
        EXPECT_NEAR(got, ref, 1e-6 * ref);
    }
}

TEST(CfmLoss, UnmaskedRowsGetNoGradientAndEmptyMaskIsRejected) {
    Rng rng(4);
    Tensor<float> v(Shape{3, 80}), u(Shape{3, 80});
    for (float& x : v.data()) x = static_cast<float>(rng.normal());
    Graph<float> g;
    auto pred = g.variable(v);
    g.backward(cfm_loss(pred, u, {1.0f, 0.0f, 1.0f}));
    for (std::size_t c = 0; c < 80; ++c) {
        EXPECT_EQ((*g.grad(pred))(1, c), 0.0f);
        EXPECT_NE((*g.grad(pred))(0, c), 0.0f);
    }
    Graph<float> g2;
    EXPECT_THROW(cfm_loss(g2.variable(v), u, TemporalMask(3, 0.0f)), InputError);
    EXPECT_THROW(cfm_loss(g2.variable(v), u, TemporalMask(2, 1.0f)), DimensionError);
}

TEST(Ctc, SingleFrameUniformThreeWay) {
    Tensor<double> lp(Shape{1, 3}, std::log(1.0 / 3.0));
    const std::vector<int> target{1};
    EXPECT_NEAR(ctc_nll(lp, target), std::log(3.0), 1e-12);
}

TEST(Ctc, MatchesBruteForceEnumeration) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t frames = 1 + rng.below(5), vocab = 2 + rng.below(3);
        const auto lp = random_logprobs(frames, vocab, rng);
        auto target = random_target(rng.below(4), vocab, rng);
        if (ctc_min_frames(target) > frames) {
            EXPECT_THROW(ctc_nll(lp, target), AlignmentError);
            continue;
        }
        const auto oracle = enumerate(lp, target);
        EXPECT_NEAR(-ctc_nll(lp, target), oracle.log_total, 1e-9) << "trial " << trial;
        EXPECT_NEAR(ctc_viterbi_align(lp, target).log_prob, oracle.best, 1e-9) << "trial " << trial;
    }
}

TEST(Ctc, FeasibilityCountsRepeats) {
    const std::vector<int> aa{1, 1}, ab{1, 2};
    EXPECT_EQ(ctc_min_frames(aa), 3u);
    EXPECT_EQ(ctc_min_frames(ab), 2u);
    Tensor<double> lp(Shape{2, 3}, std::log(1.0 / 3.0));
    EXPECT_THROW(ctc_nll(lp, aa), AlignmentError);
    EXPECT_NO_THROW(ctc_nll(lp, ab));
    const std::vector<int> bad{3};
    EXPECT_THROW(ctc_nll(lp, bad), InputError);
}

TEST(Ctc, GradientMatchesFiniteDifference) {
    Rng rng(6);
    for (bool f32 : {false, true}) {
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t frames = 6 + rng.below(6), vocab = 4;
            const auto target = random_target(1 + rng.below(3), vocab, rng);
            auto op = make_op([target](auto& g, const auto& v) { return ctc_loss(log_softmax(v[0]), std::span(target)); });
            const double err = gradcheck(op, {random_tensor(Shape{frames, vocab}, rng, -2, 2)}, f32, rng).rel_err;
            EXPECT_LT(err, f32 ? 1e-4 : 1e-6);
        }
    }
}

TEST(Ctc, ExtremeLogprobsStayFinite) {
    Tensor<double> lp(Shape{8, 4}, -1e4);
    for (std::size_t t = 0; t < 8; ++t) lp(t, t % 4) = 0.0;
    const std::vector<int> target{2, 3, 1};
    const double nll = ctc_nll(lp, target);
    EXPECT_TRUE(std::isfinite(nll));
    Graph<double> g;
    auto x = g.variable(lp);
    g.backward(ctc_loss(x, std::span<const int>(target)));
    EXPECT_TRUE(all_finite(*g.grad(x)));
}

TEST(Viterbi, PathCollapsesToTargetAndSpansTileNonBlankFrames) {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t vocab = 6, frames = 10 + rng.below(30);
        auto target = random_target(1 + rng.below(6), vocab, rng);
        const auto lp = random_logprobs(frames, vocab, rng);
        const auto a = ctc_viterbi_align(lp, target);
        ASSERT_EQ(a.frame_labels.size(), frames);
        EXPECT_EQ(collapse(a.frame_labels), target);
        double s = 0.0;
        for (std::size_t t = 0; t < frames; ++t) s += lp(t, static_cast<std::size_t>(a.frame_labels[t]));
        EXPECT_NEAR(s, a.log_prob, 1e-9);
        ASSERT_EQ(a.spans.size(), target.size());
        for (std::size_t k = 0; k < target.size(); ++k) {
            EXPECT_LT(a.spans[k].start, a.spans[k].end);
            if (k > 0) EXPECT_LE(a.spans[k - 1].end, a.spans[k].start);
            for (std::size_t t = a.spans[k].start; t < a.spans[k].end; ++t) EXPECT_EQ(a.frame_labels[t], target[k]);
        }
    }
}

TEST(Viterbi, RecoversPlantedSpans) {
    // Frames 0-2 blank, 3-6 label 1, 7 blank, 8-11 label 2.
    Tensor<double> lp(Shape{12, 3}, std::log(0.05));
    const int labels[] = {0, 0, 0, 1, 1, 1, 1, 0, 2, 2, 2, 2};
    for (std::size_t t = 0; t < 12; ++t) lp(t, static_cast<std::size_t>(labels[t])) = std::log(0.9);
    const std::vector<int> target{1, 2};
    const auto a = ctc_viterbi_align(lp, target);
    EXPECT_EQ(a.spans[0], (FrameSpan{3, 7}));
    EXPECT_EQ(a.spans[1], (FrameSpan{8, 12}));
}

TEST(GreedyDecode, MergesRepeatsAndDropsBlanks) {
    Tensor<float> lp(Shape{6, 3}, -5.0f);
    const int best[] = {1, 1, 0, 1, 2, 2};
    for (std::size_t t = 0; t < 6; ++t) lp(t, static_cast<std::size_t>(best[t])) = 0.0f;
    EXPECT_EQ(ctc_greedy_decode(lp), (std::vector<int>{1, 1, 2}));
}

TEST(TotalLoss, WeightsMeanCtc) {
    const double ctc[] = {1.5, 2.5};
    EXPECT_NEAR(total_loss(1.0, ctc, {}), 1.2, 1e-12);
    EXPECT_EQ(total_loss(1.0, std::span<const double>(), {}), 1.0);
    Graph<double> g;
    auto cfm = g.variable(Tensor<double>::scalar(1.0));
    std::vector<Var<double>> terms{g.variable(Tensor<double>::scalar(1.5)), g.variable(Tensor<double>::scalar(2.5))};
    auto total = total_loss(cfm, std::span<const Var<double>>(terms), {});
    EXPECT_NEAR(total.value()[0], 1.2, 1e-12);
    g.backward(total);
    EXPECT_NEAR((*g.grad(terms[0]))[0], 0.05, 1e-12);
    EXPECT_THROW(total_loss(1.0, ctc, {-0.1}), InputError);
}
