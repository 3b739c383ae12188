#include <benchmark/benchmark.h>

#include "avdit/audio.hpp"
#include "avdit/corpus.hpp"
#include "avdit/dit.hpp"
#include "avdit/objectives.hpp"
#include "avdit/train.hpp"

using namespace avdit;

namespace {

Tensor<float> random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Tensor<float> t(Shape{r, c});
    for (float& v : t.data()) v = static_cast<float>(rng.normal());
    return t;
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const auto a = random_matrix(n, 64, rng), b = random_matrix(64, n, rng);
    for (auto _ : state) {
        Graph<float> g(false);
        benchmark::DoNotOptimize(matmul(g.constant(a), g.constant(b)).value().data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * 64));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(200)->Arg(512);

void BM_MelSpectrogram(benchmark::State& state) {
    Rng rng(2);
    Waveform w;
    w.samples.resize(static_cast<std::size_t>(state.range(0)));
    for (double& s : w.samples) s = rng.uniform(-0.5, 0.5);
    for (auto _ : state) benchmark::DoNotOptimize(mel_spectrogram(w).data().data());
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MelSpectrogram)->Arg(16000)->Arg(48000);

// One utterance through encoders and the default DiT stack, forward only or with backward.
void dit_step(benchmark::State& state, Variant variant, bool backward) {
    CorpusConfig cc;
    cc.n_utterances = 1;
    cc.min_seconds = cc.max_seconds = 1.5;
    const auto u = generate_corpus(cc).utterances[0];
    AvDiT model(ModelConfig{.variant = variant}, 3);
    TrainConfig tc;
    Rng rng(4);
    const auto ex = draw_example(u, Alphabet::standard(), tc, rng);
    for (auto _ : state) {
        Graph<float> g(backward);
        const auto terms = example_loss(model, g, ex, tc);
        if (backward) g.backward(terms.total);
        benchmark::DoNotOptimize(terms.total.value()[0]);
    }
    state.counters["frames"] = static_cast<double>(u.frames());
}

void BM_DitForward(benchmark::State& state) { dit_step(state, static_cast<Variant>(state.range(0)), false); }
void BM_DitTrainStep(benchmark::State& state) { dit_step(state, static_cast<Variant>(state.range(0)), true); }
BENCHMARK(BM_DitForward)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DitTrainStep)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_CtcLoss(benchmark::State& state) {
    Rng rng(5);
    const auto logits = random_matrix(150, 10, rng);
    std::vector<int> target;
    for (int i = 0; i < 15; ++i) target.push_back(1 + i % 9);
    for (auto _ : state) {
        Graph<float> g;
        auto loss = ctc_loss(log_softmax(g.constant(logits)), std::span<const int>(target));
        g.backward(loss);
        benchmark::DoNotOptimize(loss.value()[0]);
    }
}
BENCHMARK(BM_CtcLoss);

}  // namespace

BENCHMARK_MAIN();
