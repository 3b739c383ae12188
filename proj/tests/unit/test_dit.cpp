#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "avdit/dit.hpp"
#include "model_fixtures.hpp"

using namespace avdit;
using avdit::testing::random_condition_inputs;
using avdit::testing::random_mel;
using avdit::testing::randomize_modulation;

namespace {

ModelConfig small_config(Variant v) {
    ModelConfig c;
    c.variant = v;
    c.n_blocks = 3;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.ctc_layers = {1, 2};
    c.enc_ff = 32;
    c.text_blocks = 2;
    c.video_blocks = 1;
    return c;
}

ModelOutput run(const AvDiT& m, Graph<float>& g, const ConditionInputs& in, const Tensor<float>& x, double t) {
    return m.forward(g, g.constant(x), t, m.encode_condition(g, in));
}

const Variant kVariants[] = {Variant::early_fusion, Variant::prefix, Variant::cross_attention};

}  // namespace

class PerVariant : public ::testing::TestWithParam<Variant> {};

TEST_P(PerVariant, ZeroGateStackIsIdentityAtInit) {
    AvDiT m(ModelConfig{.variant = GetParam()}, 1);
    Rng rng(2);
    auto in = random_condition_inputs(40, 6, rng);
    Graph<float> g(false);
    auto out = run(m, g, in, random_mel(40, rng), 0.4);
    EXPECT_EQ(out.stream_out.value(), out.stream_in.value());
    EXPECT_EQ(out.v_pred.shape(), (Shape{40, 80}));
    EXPECT_TRUE(all_finite(out.v_pred.value()));
}

TEST_P(PerVariant, ShapesAndCtcHeadsFollowConfig) {
    AvDiT m(small_config(GetParam()), 3);
    Rng rng(4);
    for (std::size_t frames : {8u, 23u}) {
        auto in = random_condition_inputs(frames, 5, rng);
        Graph<float> g(false);
        auto out = run(m, g, in, random_mel(frames, rng), 0.5);
        EXPECT_EQ(out.v_pred.shape(), (Shape{frames, 80}));
        std::set<std::size_t> layers;
        for (const auto& [l, logits] : out.ctc_logits) {
            layers.insert(l);
            EXPECT_EQ(logits.shape(), (Shape{frames, 10}));
        }
        EXPECT_EQ(layers, (std::set<std::size_t>{1, 2}));
    }
}

TEST_P(PerVariant, RepeatedForwardIsBitEqual) {
    AvDiT m(small_config(GetParam()), 5);
    Rng rng(6);
    randomize_modulation(m, rng);
    auto in = random_condition_inputs(20, 4, rng);
    const auto x = random_mel(20, rng);
    Graph<float> g1(false), g2(false);
    EXPECT_EQ(run(m, g1, in, x, 0.3).v_pred.value(), run(m, g2, in, x, 0.3).v_pred.value());
}

TEST_P(PerVariant, TimestepMattersOnceGatesAreOpen) {
    AvDiT m(small_config(GetParam()), 7);
    Rng rng(8);
    randomize_modulation(m, rng);
    auto in = random_condition_inputs(20, 4, rng);
    const auto x = random_mel(20, rng);
    Graph<float> g(false);
    EXPECT_NE(run(m, g, in, x, 0.1).stream_out.value(), run(m, g, in, x, 0.9).stream_out.value());
}

TEST_P(PerVariant, GradientsReachEveryParameter) {
    AvDiT m(small_config(GetParam()), 9);
    Rng rng(10);
    randomize_modulation(m, rng);
    // Present and absent modalities together touch every parameter.
    for (bool present : {true, false}) {
        auto in = random_condition_inputs(24, 5, rng);
        in.flags = {present, present};
        Graph<float> g;
        auto out = run(m, g, in, random_mel(24, rng), 0.6);
        auto loss = sum(mul(out.v_pred, g.constant(random_mel(24, rng))));
        for (const auto& [l, logits] : out.ctc_logits) loss = add(loss, sum(square(logits)));
        g.backward(loss);
    }
    m.params().for_each([](const Parameter<float>& p) {
        double n = 0;
        for (float v : p.grad.data()) n += std::abs(v);
        EXPECT_GT(n, 0.0) << p.name;
    });
}

TEST_P(PerVariant, InitialLossTermsAreFinite) {
    AvDiT m(ModelConfig{.variant = GetParam()}, 11);
    Rng rng(12);
    auto in = random_condition_inputs(60, 8, rng);
    Graph<float> g;
    auto out = run(m, g, in, random_mel(60, rng), 0.0);
    EXPECT_TRUE(std::isfinite(mean(square(out.v_pred)).value()[0]));
}

TEST_P(PerVariant, CheckpointRoundTripGivesIdenticalForward) {
    AvDiT m(small_config(GetParam()), 13);
    Rng rng(14);
    randomize_modulation(m, rng);
    const auto dir = std::filesystem::temp_directory_path() / ("avdit_model_ckpt_" + variant_name(GetParam()));
    std::filesystem::remove_all(dir);
    save_checkpoint(dir, m.to_checkpoint());
    auto back = AvDiT::from_checkpoint(load_checkpoint(dir));
    EXPECT_EQ(back->config(), m.config());
    auto in = random_condition_inputs(16, 3, rng);
    const auto x = random_mel(16, rng);
    Graph<float> g1(false), g2(false);
    EXPECT_EQ(run(m, g1, in, x, 0.7).v_pred.value(), run(*back, g2, in, x, 0.7).v_pred.value());
    std::filesystem::remove_all(dir);
}

INSTANTIATE_TEST_SUITE_P(Variants, PerVariant, ::testing::ValuesIn(kVariants),
                         [](const auto& info) { return variant_name(info.param); });

TEST(CrossAttention, AbsentTextAttendsToSingleNullToken) {
    AvDiT m(small_config(Variant::cross_attention), 15);
    Rng rng(16);
    auto in = random_condition_inputs(12, 4, rng);
    in.flags.text = false;
    Graph<float> g(false);
    auto cond = m.encode_condition(g, in);
    ASSERT_EQ(cond.kv.rows(), 1u);
    const auto& null_row = m.params().at("cond.text_null").value;
    const auto pos = progress_encoding(1, 16);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(cond.kv.value()[i], null_row[i] + pos[i]);
}

TEST(CrossAttention, DifferentTextChangesBlockOutput) {
    AvDiT m(small_config(Variant::cross_attention), 17);
    Rng rng(18);
    randomize_modulation(m, rng);
    auto in = random_condition_inputs(12, 4, rng);
    auto other = in;
    other.text = {8, 7, 6, 5};
    const auto x = random_mel(12, rng);
    Graph<float> g(false);
    EXPECT_NE(run(m, g, in, x, 0.5).stream_out.value(), run(m, g, other, x, 0.5).stream_out.value());
}

TEST(Prefix, CtcLogitsCoverGeneratedRowsOnly) {
    AvDiT m(small_config(Variant::prefix), 19);
    Rng rng(20);
    auto in = random_condition_inputs(15, 7, rng);
    Graph<float> g(false);
    auto cond = m.encode_condition(g, in);
    EXPECT_EQ(cond.prefix, 7u);
    auto out = m.forward(g, g.constant(random_mel(15, rng)), 0.5, cond);
    EXPECT_EQ(out.stream_out.rows(), 22u);
    for (const auto& [l, logits] : out.ctc_logits) EXPECT_EQ(logits.rows(), 15u);
}

TEST(TimestepEmbedding, DeterministicAndDistinct) {
    AvDiT m(small_config(Variant::early_fusion), 21);
    Graph<float> g(false);
    EXPECT_EQ(m.timestep_embedding(g, 0.25).value(), m.timestep_embedding(g, 0.25).value());
    EXPECT_NE(m.timestep_embedding(g, 0.25).value(), m.timestep_embedding(g, 0.26).value());
}

TEST(ModelConfig, KeyValueRoundTripAndValidation) {
    ModelConfig c = small_config(Variant::prefix);
    EXPECT_EQ(ModelConfig::from_kv(c.to_kv()), c);
    auto kv = c.to_kv();
    kv["bogus"] = "1";
    EXPECT_THROW(ModelConfig::from_kv(kv), InputError);
    kv = c.to_kv();
    kv["ctc_layers"] = "0,2";
    EXPECT_THROW(ModelConfig::from_kv(kv), InputError);
    kv = c.to_kv();
    kv["n_heads"] = "3";
    EXPECT_THROW(ModelConfig::from_kv(kv), InputError);
}

TEST(Forward, MismatchedLengthsAreDimensionErrors) {
    AvDiT m(small_config(Variant::early_fusion), 22);
    Rng rng(23);
    auto in = random_condition_inputs(12, 4, rng);
    Graph<float> g(false);
    auto cond = m.encode_condition(g, in);
    EXPECT_THROW(m.forward(g, g.constant(random_mel(13, rng)), 0.5, cond), DimensionError);
}
