#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "avdit/sampler.hpp"
#include "model_fixtures.hpp"

using namespace avdit;

namespace {

// v = a x + c with per-branch counting.
class AffineField final : public VelocityField {
   public:
    AffineField(double a, double c) : a_(a), c_(c) {}
    Tensor<double> velocity(const Tensor<double>& x, double, Branch b) override {
        ++calls[static_cast<int>(b)];
        Tensor<double> v(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) v[i] = a_ * x[i] + c_;
        return v;
    }
    int calls[3] = {0, 0, 0};

   private:
    double a_, c_;
};

// Final-state error against x0 e^{-1} for v = -x, relative to |x0|.
double decay_error(int steps, double sway) {
    AffineField f(-1.0, 0.0);
    Rng rng(42), noise_rng(42);
    const auto x1 = sample(f, Shape{4, 3}, {0, 0}, {.n_steps = steps, .sway_coeff = sway}, rng);
    double err = 0, norm = 0;
    for (std::size_t i = 0; i < x1.numel(); ++i) {
        const double x0 = noise_rng.normal();
        err += std::pow(x1[i] - x0 * std::exp(-1.0), 2);
        norm += std::pow(x0 * std::exp(-1.0), 2);
    }
    return std::sqrt(err / norm);
}

Tensor<double> random_field(Rng& rng, std::size_t n = 12) {
    Tensor<double> t(Shape{3, n / 3});
    for (double& v : t.data()) v = rng.normal();
    return t;
}

}  // namespace

TEST(Sway, EndpointsExactAndStrictlyIncreasing) {
    for (double s : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
        for (int n : {1, 2, 7, 32, 100}) {
            const auto t = sway_schedule(n, s);
            ASSERT_EQ(t.size(), static_cast<std::size_t>(n) + 1);
            EXPECT_EQ(t.front(), 0.0);
            EXPECT_EQ(t.back(), 1.0);
            for (int i = 0; i < n; ++i) EXPECT_LT(t[i], t[i + 1]) << "s=" << s << " n=" << n;
        }
    }
}

TEST(Sway, ZeroCoefficientIsUniformAndMidpointMatchesClosedForm) {
    const auto u = sway_schedule(8, 0.0);
    for (int i = 0; i <= 8; ++i) EXPECT_EQ(u[i], i / 8.0);
    EXPECT_NEAR(sway_schedule(2, -1.0)[1], 1.0 - std::cos(std::numbers::pi / 4), 1e-12);
    EXPECT_THROW(sway_schedule(0, -1.0), InputError);
}

TEST(CfgCombine, ForcedArithmetic) {
    Tensor<double> full(Shape{1}, 2.0), text(Shape{1}, 1.0), uncond(Shape{1}, 0.0);
    EXPECT_EQ(cfg_combine(full, text, uncond, {.text = 5, .video = 2})[0], 9.0);
}

TEST(CfgCombine, DegenerateScalesAreExact) {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto full = random_field(rng), text = random_field(rng), uncond = random_field(rng);
        EXPECT_EQ(cfg_combine(full, text, uncond, {0, 0}), full);
        const double s = rng.uniform(0, 8);
        const auto got = cfg_combine(full, text, uncond, {s, s});
        for (std::size_t i = 0; i < full.numel(); ++i) EXPECT_EQ(got[i], full[i] + s * (full[i] - uncond[i]));
    }
}

TEST(CfgCombine, AgreesWithThreeBranchFormAndIsLinear) {
    Rng rng(2);
    const GuidanceScales s{3.0, 1.5};
    const auto a = random_field(rng), b = random_field(rng), c = random_field(rng);
    const auto out = cfg_combine(a, b, c, s);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_NEAR(out[i], a[i] + s.video * (a[i] - b[i]) + s.text * (b[i] - c[i]), 1e-12);
    }
    auto a2 = a;
    for (double& v : a2.data()) v *= 2;
    const auto zero = Tensor<double>(a.shape());
    const auto doubled = cfg_combine(a2, b, c, s), base = cfg_combine(zero, b, c, s);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(doubled[i] - base[i], 2 * (out[i] - base[i]), 1e-12);
    EXPECT_THROW(cfg_combine(a, Tensor<double>(Shape{2}), c, s), DimensionError);
}

TEST(Scales, ParseAndValidate) {
    EXPECT_EQ(parse_scales("5,2"), (GuidanceScales{5, 2}));
    EXPECT_EQ(parse_scales("0.5,0"), (GuidanceScales{0.5, 0}));
    EXPECT_THROW(parse_scales("5"), InputError);
    EXPECT_THROW(parse_scales("5,2,1"), InputError);
    EXPECT_THROW(parse_scales("-1,2"), InputError);
}

TEST(Sample, ConstantFieldIntegratesExactly) {
    for (double sway : {-1.0, 0.0, 0.7}) {
        AffineField f(0.0, 0.75);
        Rng rng(3), noise_rng(3);
        const auto x = sample(f, Shape{5, 4}, {0, 0}, {.n_steps = 13, .sway_coeff = sway}, rng);
        for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x[i], noise_rng.normal() + 0.75, 1e-12);
    }
}

TEST(Sample, LinearDecayWithinTwoPercentAtSixtyFourSteps) {
    EXPECT_LT(decay_error(64, 0.0), 0.02);
    EXPECT_LT(decay_error(64, -1.0), 0.02);
}

TEST(Sample, EulerConvergenceIsFirstOrder) {
    for (double sway : {0.0, -1.0}) {
        const double e16 = decay_error(16, sway), e32 = decay_error(32, sway), e64 = decay_error(64, sway);
        // Least-squares slope of log error against log step size.
        const double xs[] = {std::log(1 / 16.0), std::log(1 / 32.0), std::log(1 / 64.0)};
        const double ys[] = {std::log(e16), std::log(e32), std::log(e64)};
        const double mx = (xs[0] + xs[1] + xs[2]) / 3, my = (ys[0] + ys[1] + ys[2]) / 3;
        double num = 0, den = 0;
        for (int i = 0; i < 3; ++i) {
            num += (xs[i] - mx) * (ys[i] - my);
            den += (xs[i] - mx) * (xs[i] - mx);
        }
        const double order = num / den;
        EXPECT_GE(order, 0.8) << "sway " << sway;
        EXPECT_LE(order, 1.2) << "sway " << sway;
    }
}

TEST(Sample, ZeroScalesUseOnlyFullForward) {
    AffineField f(-0.5, 0.1);
    Rng rng(4);
    sample(f, Shape{2, 2}, {0, 0}, {.n_steps = 10}, rng);
    EXPECT_EQ(f.calls[0], 10);
    EXPECT_EQ(f.calls[1], 0);
    EXPECT_EQ(f.calls[2], 0);
    AffineField g(-0.5, 0.1);
    sample(g, Shape{2, 2}, {5, 2}, {.n_steps = 10}, rng);
    EXPECT_EQ(g.calls[0], 10);
    EXPECT_EQ(g.calls[1], 10);
    EXPECT_EQ(g.calls[2], 10);
}

TEST(Sample, ReferenceRowsEndExactlyOnReference) {
    Rng rng(5);
    InpaintContext ctx{Tensor<double>(Shape{6, 3}), {0, 0, 1, 1, 1, 1}};
    for (double& v : ctx.reference.data()) v = rng.normal();
    AffineField f(-1.0, 0.3);
    const auto x = sample(f, Shape{6, 3}, {2, 1}, {.n_steps = 9}, rng, ctx);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(x(r, c), ctx.reference(r, c));
    }
    EXPECT_NE(x(3, 0), ctx.reference(3, 0));
}

TEST(Sample, DeterministicGivenSeed) {
    AffineField f(-0.3, 0.2);
    Rng a(6), b(6);
    EXPECT_EQ(sample(f, Shape{4, 4}, {5, 2}, {}, a), sample(f, Shape{4, 4}, {5, 2}, {}, b));
}

TEST(ModelField, ZeroScalesSkipGuidedBranches) {
    ModelConfig cfg;
    cfg.n_blocks = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.ctc_layers = {1};
    AvDiT model(cfg, 7);
    Rng rng(8);
    auto in = avdit::testing::random_condition_inputs(16, 4, rng);
    ModelField field(model, in);
    sample(field, Shape{16, 80}, {0, 0}, {.n_steps = 4}, rng);
    EXPECT_EQ(field.forward_count(Branch::full), 4u);
    EXPECT_EQ(field.forward_count(Branch::text_only), 0u);
    EXPECT_EQ(field.forward_count(Branch::uncond), 0u);
    ModelField guided(model, in);
    Rng r1(9), r2(9);
    const auto out = sample(guided, Shape{16, 80}, {5, 2}, {.n_steps = 3}, r1);
    EXPECT_EQ(guided.forward_count(Branch::uncond), 3u);
    EXPECT_TRUE(all_finite(out));
    EXPECT_EQ(out, sample(guided, Shape{16, 80}, {5, 2}, {.n_steps = 3}, r2));
}

TEST(Ema, DecayEndpointsAndGeometricApproach) {
    ParamStore ps;
    auto& p = ps.add("w", Tensor<float>(Shape{3}, 0.0f));
    Ema ema(ps);
    p.value.fill(1.0f);
    ema.update(ps, 1.0);
    EXPECT_EQ(ema.shadow().at("w")[0], 0.0f);
    const double decay = 0.9;
    for (int k = 1; k <= 20; ++k) {
        ema.update(ps, decay);
        // Gap to w after k steps is decay^k.
        EXPECT_NEAR(1.0 - ema.shadow().at("w")[1], std::pow(decay, k), 1e-6);
    }
    ema.update(ps, 0.0);
    EXPECT_EQ(ema.shadow().at("w")[2], 1.0f);
}

TEST(Ema, SwapExchangesAndRestores) {
    ParamStore ps;
    auto& p = ps.add("w", Tensor<float>(Shape{2}, 1.0f));
    Ema ema(ps);
    p.value.fill(3.0f);
    ema.swap(ps);
    EXPECT_EQ(p.value[0], 1.0f);
    ema.swap(ps);
    EXPECT_EQ(p.value[0], 3.0f);
    ParamStore other;
    other.add("unknown", Tensor<float>(Shape{1}));
    EXPECT_THROW(ema.update(other, 0.5), InputError);
}
