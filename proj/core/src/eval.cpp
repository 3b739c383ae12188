#include "avdit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "avdit/kv.hpp"
#include "avdit/parallel.hpp"
#include "avdit/tensor_io.hpp"

namespace avdit {

namespace {

constexpr std::size_t kHidden = 48;
constexpr std::size_t kVocab = 10;
constexpr const char* kCsvHeader = "setting,template_cer,ctc_cer,align_mae_ms,sync_proxy,tilt_error,n_utterances";

std::vector<int> frame_labels(const SyntheticUtterance& u, const Alphabet& alphabet) {
    std::vector<int> labels(u.frames());
    for (std::size_t i = 0; i < u.gold_spans.size(); ++i) {
        const int id = alphabet.id(u.text[i]);
        for (std::size_t t = u.gold_spans[i].start; t < u.gold_spans[i].end; ++t) labels[t] = id;
    }
    return labels;
}

Tensor<float> rows_of(const Tensor<float>& m, std::size_t begin, std::size_t end) {
    Tensor<float> out(Shape{end - begin, m.cols()});
    std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
              m.data().begin() + static_cast<std::ptrdiff_t>(end * m.cols()), out.data().begin());
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

EvalClassifier::EvalClassifier(std::uint64_t seed) {
    Rng rng(seed, 0x636c6173);
    conv_w_ = &ps_.add("conv.w", xavier_init(3 * kMelBins, kHidden, Shape{3, kMelBins, kHidden}, rng));
    conv_b_ = &ps_.add("conv.b", Tensor<float>(Shape{kHidden}));
    head_ = nn::Linear::make(ps_, "head", kHidden, kVocab, rng);
}

nn::V EvalClassifier::forward(nn::G& g, const Tensor<float>& mel) const {
    if (mel.rank() != 2 || mel.cols() != kMelBins) throw DimensionError("eval classifier expects [T x 80] mel");
    nn::V h = gelu(conv1d(g.constant(mel), g.param(*conv_w_), g.param(*conv_b_), 1, 1));
    return log_softmax(head_(g, h));
}

Tensor<float> EvalClassifier::logprobs(const Tensor<float>& mel) const {
    Graph<float> g(false);
    return forward(g, mel).value();
}

double EvalClassifier::fit(std::span<const SyntheticUtterance> data, long steps, Rng& rng) {
    if (data.empty()) throw InputError("eval classifier needs training utterances");
    const Alphabet alphabet = Alphabet::standard();
    AdamState adam;
    double last = 0;
    for (long step = 0; step < steps; ++step) {
        const auto& u = data[rng.below(data.size())];
        const auto labels = frame_labels(u, alphabet);
        Tensor<float> onehot(Shape{u.frames(), kVocab});
        for (std::size_t t = 0; t < labels.size(); ++t) onehot(t, static_cast<std::size_t>(labels[t])) = 1.0f;
        ps_.zero_grad();
        Graph<float> g;
        auto loss = scale(sum(mul(forward(g, u.mel), g.constant(onehot))), -1.0f / static_cast<float>(u.frames()));
        g.backward(loss);
        adam_step(ps_, adam, {}, lr_schedule(step, steps / 10, 3e-3, steps));
        last = loss.value()[0];
    }
    return last;
}

double EvalClassifier::frame_accuracy(std::span<const SyntheticUtterance> data) const {
    const Alphabet alphabet = Alphabet::standard();
    std::size_t right = 0, total = 0;
    for (const auto& u : data) {
        const auto lp = logprobs(u.mel);
        const auto labels = frame_labels(u, alphabet);
        for (std::size_t t = 0; t < labels.size(); ++t) {
            auto row = lp.row(t);
            right += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[t];
        }
        total += labels.size();
    }
    return static_cast<double>(right) / static_cast<double>(std::max<std::size_t>(total, 1));
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double alignment_mae_ms(std::span<const FrameSpan> predicted, std::span<const FrameSpan> gold) {
    if (predicted.size() != gold.size() || gold.empty()) throw InputError("alignment_mae_ms: span counts differ");
    double total = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const auto d = [](std::size_t x, std::size_t y) { return std::abs(static_cast<double>(x) - static_cast<double>(y)); };
        total += (d(predicted[i].start, gold[i].start) + d(predicted[i].end, gold[i].end)) / 2.0;
    }
    return 10.0 * total / static_cast<double>(gold.size());
}

double sync_proxy(const Tensor<float>& generated, const Tensor<float>& gold) {
    const std::size_t n = std::min(generated.rows(), gold.rows());
    if (n < 2) throw InputError("sync_proxy needs at least two frames");
    std::vector<double> a(n), b(n);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t k = 0; k < generated.cols(); ++k) a[t] += generated(t, k);
        for (std::size_t k = 0; k < gold.cols(); ++k) b[t] += gold(t, k);
        a[t] /= static_cast<double>(generated.cols());
        b[t] /= static_cast<double>(gold.cols());
    }
    double ma = 0, mb = 0;
    for (std::size_t t = 0; t < n; ++t) ma += a[t], mb += b[t];
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t t = 0; t < n; ++t) {
        sab += (a[t] - ma) * (b[t] - mb);
        saa += (a[t] - ma) * (a[t] - ma);
        sbb += (b[t] - mb) * (b[t] - mb);
    }
    if (saa == 0 || sbb == 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

double estimate_tilt(const Tensor<float>& mel, std::span<const FrameSpan> spans, std::string_view text) {
    if (spans.size() != text.size()) throw InputError("estimate_tilt: span count differs from text length");
    std::vector<double> r(kMelBins, 0.0);
    std::size_t frames = 0;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const auto& tmpl = symbol_template(text[i]);
        for (std::size_t t = spans[i].start; t < spans[i].end && t < mel.rows(); ++t, ++frames) {
            for (std::size_t k = 0; k < kMelBins; ++k) r[k] += mel(t, k) - tmpl[k];
        }
    }
    if (frames == 0) throw InputError("estimate_tilt: no frames");
    double mb = 0, mr = 0;
    for (std::size_t k = 0; k < kMelBins; ++k) mb += tilt_basis(k), mr += r[k] / static_cast<double>(frames);
    mb /= kMelBins;
    mr /= kMelBins;
    double sbb = 0, sbr = 0;
    for (std::size_t k = 0; k < kMelBins; ++k) {
        sbb += (tilt_basis(k) - mb) * (tilt_basis(k) - mb);
        sbr += (tilt_basis(k) - mb) * (r[k] / static_cast<double>(frames) - mr);
    }
    return sbr / sbb;
}

UtteranceScore score_utterance(const Tensor<float>& generated, const SyntheticUtterance& gold,
                               const std::string& ctc_text, const EvalClassifier& classifier,
                               std::size_t n_speakers) {
    if (generated.rows() < gold.frames()) throw DimensionError("generated region is shorter than the gold utterance");
    const Tensor<float> gen = rows_of(generated, 0, gold.frames());
    const Alphabet alphabet = Alphabet::standard();
    UtteranceScore s;
    s.chars = gold.text.size();
    s.template_edits = edit_distance(gold.text, template_decode(gen, gold.gold_spans));
    s.ctc_edits = edit_distance(gold.text, ctc_text);
    const auto ids = alphabet.encode(gold.text);
    const auto align = ctc_viterbi_align(classifier.logprobs(gen), std::span<const int>(ids));
    s.mae_ms = alignment_mae_ms(align.spans, gold.gold_spans);
    s.sync = sync_proxy(gen, gold.mel);
    s.tilt_error = std::abs(estimate_tilt(gen, gold.gold_spans, gold.text) - speaker_tilt(gold.speaker_id, n_speakers));
    return s;
}

EvalRow aggregate(const std::string& setting, std::span<const UtteranceScore> scores) {
    if (scores.empty()) throw InputError("evaluation split is empty");
    EvalRow r;
    r.setting = setting;
    r.n_utterances = scores.size();
    double chars = 0, tmpl = 0, ctc = 0, mae = 0;
    for (const auto& s : scores) {
        chars += static_cast<double>(s.chars);
        tmpl += static_cast<double>(s.template_edits);
        ctc += static_cast<double>(s.ctc_edits);
        mae += s.mae_ms * static_cast<double>(s.chars);
        r.sync_proxy += s.sync;
        r.tilt_error += s.tilt_error;
    }
    r.template_cer = tmpl / chars;
    r.ctc_cer = ctc / chars;
    r.align_mae_ms = mae / chars;
    r.sync_proxy /= static_cast<double>(scores.size());
    r.tilt_error /= static_cast<double>(scores.size());
    return r;
}

std::string format_eval_csv(std::span<const EvalRow> rows) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : rows) {
        if (r.setting.find_first_of(",\n") != std::string::npos) throw InputError("setting names may not contain commas");
        out += r.setting + "," + kv::format(r.template_cer) + "," + kv::format(r.ctc_cer) + "," +
               kv::format(r.align_mae_ms) + "," + kv::format(r.sync_proxy) + "," + kv::format(r.tilt_error) + "," +
               std::to_string(r.n_utterances) + "\n";
    }
    return out;
}

std::vector<EvalRow> parse_eval_csv(std::string_view text, const std::string& source) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw ParseError(source + ":1: missing or wrong header");
    std::vector<EvalRow> rows;
    for (std::size_t n = 2; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        const std::string where = source + ":" + std::to_string(n);
        if (f.size() != 7) throw ParseError(where + ": expected 7 fields, got " + std::to_string(f.size()));
        try {
            rows.push_back({f[0], kv::parse_double("template_cer", f[1]), kv::parse_double("ctc_cer", f[2]),
                            kv::parse_double("align_mae_ms", f[3]), kv::parse_double("sync_proxy", f[4]),
                            kv::parse_double("tilt_error", f[5]), kv::parse_size("n_utterances", f[6])});
        } catch (const InputError& e) {
            throw ParseError(where + ": " + e.what());
        }
    }
    return rows;
}

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows) {
    write_text_file(path, format_eval_csv(rows));
}

std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path) {
    return parse_eval_csv(read_text_file(path), path.string());
}

EvalSplit split_corpus(const Corpus& corpus, std::size_t n_eval) {
    const auto& us = corpus.utterances;
    if (n_eval == 0) throw InputError("evaluation split is empty");
    if (n_eval >= us.size()) throw InputError("evaluation split leaves no training utterances");
    EvalSplit s;
    s.train.assign(us.begin(), us.end() - static_cast<std::ptrdiff_t>(n_eval));
    s.held_out.assign(us.end() - static_cast<std::ptrdiff_t>(n_eval), us.end());
    return s;
}

const SyntheticUtterance& pick_reference(const SyntheticUtterance& target, std::span<const SyntheticUtterance> train) {
    const SyntheticUtterance* best = nullptr;
    for (const auto& u : train) {
        if (u.speaker_id != target.speaker_id || u.id == target.id) continue;
        if (!best || u.frames() < best->frames()) best = &u;
    }
    if (!best) throw InputError("no reference utterance for speaker " + std::to_string(target.speaker_id));
    return *best;
}

GeneratedUtterance generate_for(const AvDiT& model, const SyntheticUtterance& target,
                                const SyntheticUtterance& reference, ModalityFlags flags,
                                const GuidanceScales& scales, const SamplerConfig& cfg, Rng& rng) {
    GeneratedUtterance out;
    out.pair = make_reference_pair(target, reference, Alphabet::standard());
    out.pair.inputs.flags = flags;
    const std::size_t total = out.pair.inputs.frames();
    ModelField field(model, out.pair.inputs);
    const InpaintContext ctx{out.pair.inputs.mel.cast<double>(), out.pair.inputs.mask};
    out.full = sample(field, Shape{total, kMelBins}, scales, cfg, rng, ctx).cast<float>();
    out.target = rows_of(out.full, out.pair.ref_frames, total);
    return out;
}

std::string ctc_transcript(const AvDiT& model, const GeneratedUtterance& gen, ModalityFlags flags) {
    ConditionInputs in = gen.pair.inputs;
    in.flags = flags;
    Graph<float> g(false);
    const auto out = model.forward(g, g.constant(gen.full), 1.0, model.encode_condition(g, in));
    if (out.ctc_logits.empty()) return {};
    const Tensor<float> rows =
        rows_of(out.ctc_logits.rbegin()->second.value(), gen.pair.ref_frames, gen.pair.ref_frames + gen.pair.target_frames);
    Graph<float> h(false);
    const auto ids = ctc_greedy_decode(log_softmax(h.constant(rows)).value());
    return Alphabet::standard().decode(ids);
}

EvalRow evaluate_model(const std::string& setting, const AvDiT& model, const EvalSplit& split,
                       const EvalClassifier& classifier, ModalityFlags flags, const GuidanceScales& scales,
                       const SamplerConfig& cfg, std::size_t n_speakers, std::uint64_t seed) {
    if (split.held_out.empty()) throw InputError("evaluation split is empty");
    std::vector<UtteranceScore> scores(split.held_out.size());
    const Rng root(seed, 0x6576616c);
    parallel_for(scores.size(), [&](std::size_t i) {
        Rng rng = root.fork(i);
        const auto& target = split.held_out[i];
        const auto gen = generate_for(model, target, pick_reference(target, split.train), flags, scales, cfg, rng);
        scores[i] = score_utterance(gen.target, target, ctc_transcript(model, gen, flags), classifier, n_speakers);
    });
    return aggregate(setting, scores);
}

EvalRow evaluate_gold(const EvalSplit& split, const EvalClassifier& classifier, std::size_t n_speakers) {
    std::vector<UtteranceScore> scores;
    for (const auto& u : split.held_out) scores.push_back(score_utterance(u.mel, u, u.text, classifier, n_speakers));
    return aggregate("gold", scores);
}

}  // namespace avdit
