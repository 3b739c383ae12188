#include "avdit/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <numbers>

#include "avdit/tensor_io.hpp"

namespace avdit {

namespace {

// FFTW planning is not thread-safe; plans are cached per size and executed
// with the new-array interface on per-call buffers.
class R2CPlan {
   public:
    static const R2CPlan& get(std::size_t n) {
        static std::mutex mu;
        static std::vector<std::unique_ptr<R2CPlan>> cache;
        std::lock_guard lock(mu);
        for (const auto& p : cache) {
            if (p->n_ == n) return *p;
        }
        cache.push_back(std::unique_ptr<R2CPlan>(new R2CPlan(n)));
        return *cache.back();
    }

    void execute(double* in, fftw_complex* out) const { fftw_execute_dft_r2c(plan_, in, out); }

   private:
    explicit R2CPlan(std::size_t n) : n_(n) {
        double* in = fftw_alloc_real(n);
        fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
        fftw_free(in);
        fftw_free(out);
        if (!plan_) throw InputError("fftw could not plan a transform of size " + std::to_string(n));
    }

    std::size_t n_;
    fftw_plan plan_ = nullptr;
};

// Reflect index j into [0, n) (no edge repeat), folding as often as needed.
std::size_t reflect(long j, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * static_cast<long>(n - 1);
    long k = j % period;
    if (k < 0) k += period;
    return static_cast<std::size_t>(k < static_cast<long>(n) ? k : period - k);
}

template <typename U>
void put_le(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

template <typename U>
U get_le(std::string_view bytes, std::size_t pos) {
    U v;
    std::memcpy(&v, bytes.data() + pos, sizeof(U));
    return v;
}

}  // namespace

void Waveform::validate() const {
    if (sample_rate != kSampleRate) {
        throw InputError("waveform sample rate must be 16000, got " + std::to_string(sample_rate));
    }
    if (samples.empty()) throw InputError("waveform is empty");
    for (double s : samples) {
        if (!std::isfinite(s)) throw InputError("waveform contains a non-finite sample");
    }
}

Tensor<double> Spectrum::magnitude() const {
    Tensor<double> m(Shape{frames, bins});
    for (std::size_t i = 0; i < values.size(); ++i) m[i] = std::abs(values[i]);
    return m;
}

std::size_t frame_count(std::size_t n_samples, std::size_t hop) { return (n_samples + hop - 1) / hop; }

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    return w;
}

Spectrum stft(const Waveform& w, std::size_t n_fft, std::size_t hop) {
    w.validate();
    if (n_fft < 2 || n_fft % 2 != 0 || hop == 0) throw InputError("stft needs an even n_fft >= 2 and hop >= 1");
    const std::size_t n = w.samples.size();
    const long half = static_cast<long>(n_fft / 2);

    Spectrum s;
    s.frames = frame_count(n, hop);
    s.bins = n_fft / 2 + 1;
    s.values.resize(s.frames * s.bins);

    const auto window = hann_window(n_fft);
    const R2CPlan& plan = R2CPlan::get(n_fft);
    double* in = fftw_alloc_real(n_fft);
    fftw_complex* out = fftw_alloc_complex(s.bins);
    for (std::size_t f = 0; f < s.frames; ++f) {
        const long start = static_cast<long>(f * hop) - half;
        for (std::size_t k = 0; k < n_fft; ++k) {
            in[k] = window[k] * w.samples[reflect(start + static_cast<long>(k), n)];
        }
        plan.execute(in, out);
        for (std::size_t b = 0; b < s.bins; ++b) s.values[f * s.bins + b] = {out[b][0], out[b][1]};
    }
    fftw_free(in);
    fftw_free(out);
    return s;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sr, double fmin, double fmax) {
    if (n_mels < 1) throw InputError("mel_filterbank needs n_mels >= 1");
    if (fmax > sr / 2.0) throw InputError("mel_filterbank fmax exceeds Nyquist");
    if (!(fmin >= 0.0 && fmin < fmax)) throw InputError("mel_filterbank needs 0 <= fmin < fmax");
    const std::size_t bins = n_fft / 2 + 1;

    std::vector<double> edges(n_mels + 2);
    const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    }

    Tensor<double> fb(Shape{n_mels, bins});
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sr / static_cast<double>(n_fft);
            const double up = (f - lo) / (mid - lo);
            const double down = (hi - f) / (hi - mid);
            fb(m, k) = std::max(0.0, std::min(up, down));
        }
    }
    return fb;
}

Tensor<double> mel_spectrogram(const Waveform& w) {
    static const Tensor<double> fb = mel_filterbank();
    const Tensor<double> mag = stft(w).magnitude();
    const std::size_t frames = mag.rows(), bins = mag.cols();
    Tensor<double> mel(Shape{frames, kMelBins});
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t m = 0; m < kMelBins; ++m) {
            double acc = 0.0;
            for (std::size_t k = 0; k < bins; ++k) acc += fb(m, k) * mag(t, k);
            mel(t, m) = std::log(std::max(acc, kLogFloor));
        }
    }
    return mel;
}

Waveform read_wav(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    const std::string where = path.string() + ": ";
    std::string_view b(bytes);
    if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE") {
        throw ParseError(where + "not a RIFF/WAVE file");
    }
    std::size_t pos = 12;
    bool have_fmt = false;
    Waveform w;
    while (pos + 8 <= b.size()) {
        const auto id = b.substr(pos, 4);
        const auto size = get_le<std::uint32_t>(b, pos + 4);
        const std::size_t body = pos + 8;
        if (size > b.size() - body) throw ParseError(where + "chunk '" + std::string(id) + "' truncated");
        if (id == "fmt ") {
            if (size < 16) throw ParseError(where + "fmt chunk too short");
            const auto format = get_le<std::uint16_t>(b, body);
            const auto channels = get_le<std::uint16_t>(b, body + 2);
            const auto rate = get_le<std::uint32_t>(b, body + 4);
            const auto bits = get_le<std::uint16_t>(b, body + 14);
            if (format != 1 || channels != 1 || bits != 16) {
                throw InputError(where + "only 16-bit PCM mono WAV is supported");
            }
            w.sample_rate = static_cast<int>(rate);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw ParseError(where + "data chunk before fmt chunk");
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                w.samples[i] = get_le<std::int16_t>(b, body + 2 * i) / 32767.0;
            }
            w.validate();
            return w;
        }
        pos = body + size + (size & 1u);
    }
    throw ParseError(where + "no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
    w.validate();
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::string out;
    out.reserve(44 + data_bytes);
    out.append("RIFF");
    put_le<std::uint32_t>(out, 36 + data_bytes);
    out.append("WAVEfmt ");
    put_le<std::uint32_t>(out, 16);
    put_le<std::uint16_t>(out, 1);
    put_le<std::uint16_t>(out, 1);
    put_le<std::uint32_t>(out, kSampleRate);
    put_le<std::uint32_t>(out, kSampleRate * 2);
    put_le<std::uint16_t>(out, 2);
    put_le<std::uint16_t>(out, 16);
    out.append("data");
    put_le<std::uint32_t>(out, data_bytes);
    for (double s : w.samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        put_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(c * 32767.0)));
    }
    write_text_file(path, out);
}

}  // namespace avdit
