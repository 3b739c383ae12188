#include "avdit/corpus.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "avdit/audio.hpp"
#include "avdit/kv.hpp"
#include "avdit/parallel.hpp"
#include "avdit/tensor_io.hpp"

namespace avdit {

namespace {

constexpr std::size_t kMinSymbolFrames = 8;
constexpr std::size_t kMaxSymbolFrames = 24;
constexpr std::size_t kMinSymbols = 3;
constexpr std::size_t kMaxSymbols = 20;
constexpr char kLetters[] = "abcdefgh";

std::array<std::vector<float>, 9> build_templates() {
    std::array<std::vector<float>, 9> t;
    for (std::size_t i = 0; i < 8; ++i) {
        const double center = 6.0 + 9.5 * static_cast<double>(i);
        const double second = 3.0 + center / 2.0;
        const double base = -1.5 + 0.2 * static_cast<double>(i);
        t[i].resize(kMelBins);
        for (std::size_t k = 0; k < kMelBins; ++k) {
            const double x = static_cast<double>(k);
            t[i][k] = static_cast<float>(base + 3.0 * std::exp(-0.5 * std::pow((x - center) / 4.0, 2)) +
                                         1.5 * std::exp(-0.5 * std::pow((x - second) / 3.0, 2)));
        }
    }
    t[8].assign(kMelBins, -4.0f);
    return t;
}

std::size_t symbol_index(char c) {
    if (c == ' ') return 8;
    if (c >= 'a' && c <= 'h') return static_cast<std::size_t>(c - 'a');
    throw InputError(std::string("no template for symbol '") + c + "'");
}

// Residual of v after least-squares removal of a + b * tilt_basis(k).
std::vector<double> detrend(std::span<const double> v) {
    double mb = 0, mv = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        mb += tilt_basis(k);
        mv += v[k];
    }
    mb /= static_cast<double>(v.size());
    mv /= static_cast<double>(v.size());
    double sbb = 0, sbv = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        sbb += (tilt_basis(k) - mb) * (tilt_basis(k) - mb);
        sbv += (tilt_basis(k) - mb) * (v[k] - mv);
    }
    const double b = sbv / sbb;
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) r[k] = v[k] - mv - b * (tilt_basis(k) - mb);
    return r;
}

std::string make_text(std::size_t len, Rng& rng) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        const bool inner = i > 0 && i + 1 < len;
        if (inner && s.back() != ' ' && rng.bernoulli(0.2)) {
            s += ' ';
            continue;
        }
        char c;
        do c = kLetters[rng.below(8)];
        while (!s.empty() && c == s.back());
        s += c;
    }
    return s;
}

std::string utterance_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "utt%05zu", index);
    return buf;
}

[[noreturn]] void index_error(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

void CorpusConfig::validate() const {
    if (n_utterances < 1) throw InputError("corpus n_utterances must be positive");
    if (n_speakers < 1) throw InputError("corpus n_speakers must be positive");
    if (!(min_seconds > 0 && min_seconds <= max_seconds)) throw InputError("corpus length range is empty");
    if (min_seconds * 100 < static_cast<double>(kMinSymbols * kMinSymbolFrames) ||
        max_seconds * 100 > static_cast<double>(kMaxSymbols * kMaxSymbolFrames)) {
        throw InputError("corpus length range must lie within [0.24, 4.8] seconds");
    }
    if (!(noise >= 0) || !(video_noise >= 0)) throw InputError("corpus noise levels must be non-negative");
}

std::map<std::string, std::string> CorpusConfig::to_kv() const {
    return {{"n_utterances", std::to_string(n_utterances)},
            {"min_seconds", kv::format(min_seconds)},
            {"max_seconds", kv::format(max_seconds)},
            {"n_speakers", std::to_string(n_speakers)},
            {"noise", kv::format(noise)},
            {"video_noise", kv::format(video_noise)},
            {"seed", std::to_string(seed)}};
}

CorpusConfig CorpusConfig::from_kv(const std::map<std::string, std::string>& kv) {
    CorpusConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "n_utterances") c.n_utterances = kv::parse_size(k, v);
        else if (k == "min_seconds") c.min_seconds = kv::parse_double(k, v);
        else if (k == "max_seconds") c.max_seconds = kv::parse_double(k, v);
        else if (k == "n_speakers") c.n_speakers = kv::parse_size(k, v);
        else if (k == "noise") c.noise = kv::parse_double(k, v);
        else if (k == "video_noise") c.video_noise = kv::parse_double(k, v);
        else if (k == "seed") c.seed = kv::parse_size(k, v);
        else throw InputError("unknown corpus config key '" + k + "'");
    }
    c.validate();
    return c;
}

const std::vector<float>& symbol_template(char c) {
    static const auto templates = build_templates();
    return templates[symbol_index(c)];
}

double tilt_basis(std::size_t bin) { return static_cast<double>(bin) / static_cast<double>(kMelBins - 1) - 0.5; }

double speaker_tilt(int speaker_id, std::size_t n_speakers) {
    if (n_speakers <= 1) return 0.0;
    return -1.5 + 3.0 * static_cast<double>(speaker_id) / static_cast<double>(n_speakers - 1);
}

std::size_t viseme_group(char c) { return symbol_index(c) / 2; }

SyntheticUtterance generate_utterance(const CorpusConfig& cfg, std::size_t index, Rng& rng) {
    cfg.validate();
    const auto lo_frames = static_cast<std::int64_t>(std::ceil(cfg.min_seconds * 100 - 1e-9));
    const auto hi_frames = static_cast<std::int64_t>(std::floor(cfg.max_seconds * 100 + 1e-9));
    const auto frames = static_cast<std::size_t>(rng.range(lo_frames, hi_frames));
    const std::size_t lo_len = std::max(kMinSymbols, (frames + kMaxSymbolFrames - 1) / kMaxSymbolFrames);
    const std::size_t hi_len = std::min(kMaxSymbols, frames / kMinSymbolFrames);
    const auto len = static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(lo_len), static_cast<std::int64_t>(hi_len)));

    SyntheticUtterance u;
    u.id = utterance_id(index);
    u.text = make_text(len, rng);
    u.speaker_id = static_cast<int>(rng.below(cfg.n_speakers));

    std::vector<std::size_t> dur(len, kMinSymbolFrames);
    for (std::size_t extra = frames - len * kMinSymbolFrames; extra > 0;) {
        const std::size_t i = rng.below(len);
        const std::size_t add = std::min({extra, kMaxSymbolFrames - dur[i], 1 + rng.below(8)});
        dur[i] += add;
        extra -= add;
    }
    std::size_t start = 0;
    for (std::size_t d : dur) {
        u.gold_spans.push_back({start, start + d});
        start += d;
    }

    const double tilt = speaker_tilt(u.speaker_id, cfg.n_speakers);
    u.mel = Tensor<float>(Shape{frames, kMelBins});
    std::vector<char> frame_symbol(frames);
    for (std::size_t i = 0; i < len; ++i) {
        const auto& tmpl = symbol_template(u.text[i]);
        for (std::size_t t = u.gold_spans[i].start; t < u.gold_spans[i].end; ++t) {
            frame_symbol[t] = u.text[i];
            for (std::size_t k = 0; k < kMelBins; ++k) {
                u.mel(t, k) = static_cast<float>(tmpl[k] + tilt * tilt_basis(k) + cfg.noise * rng.normal());
            }
        }
    }

    const std::size_t vframes = (frames + kVideoStride - 1) / kVideoStride;
    u.video = Tensor<float>(Shape{vframes, kVideoDim});
    std::size_t next_onset = 0;
    for (std::size_t j = 0; j < vframes; ++j) {
        const std::size_t centre = std::min(j * kVideoStride + kVideoStride / 2, frames - 1);
        bool onset = false;
        while (next_onset < len && u.gold_spans[next_onset].start < (j + 1) * kVideoStride) {
            onset = true;
            ++next_onset;
        }
        for (std::size_t c = 0; c < kVideoDim; ++c) {
            double v = cfg.video_noise * rng.normal();
            if (c == viseme_group(frame_symbol[centre])) v += 1.0;
            if (c == 5 && onset) v += 1.0;
            u.video(j, c) = static_cast<float>(v);
        }
    }
    return u;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    Corpus c{cfg, std::vector<SyntheticUtterance>(cfg.n_utterances)};
    const Rng root(cfg.seed, 0x636f72707573);
    parallel_for(cfg.n_utterances, [&](std::size_t i) {
        Rng rng = root.fork(i);
        c.utterances[i] = generate_utterance(cfg, i, rng);
    });
    return c;
}

std::string template_decode(const Tensor<float>& mel, std::span<const FrameSpan> spans) {
    static const auto residuals = [] {
        std::array<std::vector<double>, 9> r;
        const std::string symbols = "abcdefgh ";
        for (std::size_t i = 0; i < 9; ++i) {
            const auto& t = symbol_template(symbols[i]);
            std::vector<double> v(t.begin(), t.end());
            r[i] = detrend(v);
        }
        return r;
    }();
    if (mel.rank() != 2 || mel.cols() != kMelBins) throw DimensionError("template_decode: mel must be [T x 80]");
    std::string out;
    for (const auto& s : spans) {
        if (s.start >= s.end || s.end > mel.rows()) throw InputError("template_decode: span outside the mel");
        std::vector<double> m(kMelBins, 0.0);
        for (std::size_t t = s.start; t < s.end; ++t) {
            for (std::size_t k = 0; k < kMelBins; ++k) m[k] += mel(t, k);
        }
        for (double& v : m) v /= static_cast<double>(s.end - s.start);
        const auto r = detrend(m);
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < 9; ++i) {
            double d = 0;
            for (std::size_t k = 0; k < kMelBins; ++k) d += (r[k] - residuals[i][k]) * (r[k] - residuals[i][k]);
            if (d < best_d) best_d = d, best = i;
        }
        out += "abcdefgh "[best];
    }
    return out;
}

ReferencePair make_reference_pair(const SyntheticUtterance& target, const SyntheticUtterance& reference,
                                  const Alphabet& alphabet) {
    if (target.speaker_id != reference.speaker_id) {
        throw InputError("reference pair needs one speaker, got " + std::to_string(reference.speaker_id) + " and " +
                         std::to_string(target.speaker_id));
    }
    ReferencePair p;
    p.ref_frames = reference.frames();
    p.target_frames = kVideoStride * target.video.rows();
    const std::size_t total = p.ref_frames + p.target_frames;
    p.inputs.mel = Tensor<float>(Shape{total, kMelBins});
    std::copy(reference.mel.data().begin(), reference.mel.data().end(), p.inputs.mel.data().begin());
    p.inputs.mask.assign(total, 1.0f);
    std::fill(p.inputs.mask.begin(), p.inputs.mask.begin() + static_cast<std::ptrdiff_t>(p.ref_frames), 0.0f);
    p.inputs.video = target.video;
    p.inputs.video_offset = p.ref_frames;
    p.text = reference.text + " " + target.text;
    p.inputs.text = alphabet.encode(p.text);
    return p;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "corpus.conf", format_key_values(corpus.config.to_kv()));
    std::ostringstream index;
    for (const auto& u : corpus.utterances) {
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& s : u.gold_spans) spans.push_back({s.start, s.end});
        const nlohmann::json line = {{"id", u.id},
                                     {"text", u.text},
                                     {"speaker", u.speaker_id},
                                     {"frames", u.frames()},
                                     {"video_frames", u.video.rows()},
                                     {"spans", spans},
                                     {"mel", u.id + ".mel.adtn"},
                                     {"video", u.id + ".video.adtn"}};
        index << line.dump() << '\n';
        write_tensor(dir / (u.id + ".mel.adtn"), u.mel);
        write_tensor(dir / (u.id + ".video.adtn"), u.video);
    }
    write_text_file(dir / "index.jsonl", index.str());
}

Corpus read_corpus(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw InputError("corpus directory not found: " + dir.string());
    Corpus c;
    const auto conf = dir / "corpus.conf";
    c.config = CorpusConfig::from_kv(parse_key_values(read_text_file(conf), conf.string()));
    const auto index_path = dir / "index.jsonl";
    std::istringstream index(read_text_file(index_path));
    std::string line;
    for (std::size_t n = 1; std::getline(index, line); ++n) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            index_error(index_path, n, std::string("malformed JSON: ") + e.what());
        }
        SyntheticUtterance u;
        try {
            u.id = j.at("id").get<std::string>();
            u.text = j.at("text").get<std::string>();
            u.speaker_id = j.at("speaker").get<int>();
            for (const auto& s : j.at("spans")) u.gold_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
            u.mel = read_tensor_as<float>(dir / j.at("mel").get<std::string>());
            u.video = read_tensor_as<float>(dir / j.at("video").get<std::string>());
            if (u.mel.rows() != j.at("frames").get<std::size_t>() ||
                u.video.rows() != j.at("video_frames").get<std::size_t>()) {
                index_error(index_path, n, "tensor length disagrees with the index");
            }
        } catch (const nlohmann::json::exception& e) {
            index_error(index_path, n, std::string("bad field: ") + e.what());
        } catch (const ParseError& e) {
            if (std::string(e.what()).rfind(index_path.string(), 0) == 0) throw;
            index_error(index_path, n, e.what());
        }
        if (u.gold_spans.size() != u.text.size()) index_error(index_path, n, "span count differs from text length");
        c.utterances.push_back(std::move(u));
    }
    if (c.utterances.size() != c.config.n_utterances) {
        throw ParseError(index_path.string() + ": expected " + std::to_string(c.config.n_utterances) +
                         " utterances, found " + std::to_string(c.utterances.size()));
    }
    return c;
}

}  // namespace avdit
