#pragma once

#include <complex>
#include <filesystem>
#include <vector>

#include "avdit/tensor.hpp"

namespace avdit {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kFftSize = 640;
inline constexpr std::size_t kHopSize = 160;
inline constexpr std::size_t kMelBins = 80;
inline constexpr double kLogFloor = 1e-5;

/// 16 kHz mono samples in [-1, 1].
struct Waveform {
    std::vector<double> samples;
    int sample_rate = kSampleRate;

    /// Throws InputError on a non-16 kHz rate, empty buffer or non-finite sample.
    void validate() const;
};

/// Complex STFT frames, frame-major: frames x bins.
struct Spectrum {
    std::size_t frames = 0;
    std::size_t bins = 0;
    std::vector<std::complex<double>> values;

    std::complex<double> at(std::size_t frame, std::size_t bin) const { return values[frame * bins + bin]; }
    Tensor<double> magnitude() const;
};

/// Number of frames for a signal of `n_samples`: ceil(n / hop).
std::size_t frame_count(std::size_t n_samples, std::size_t hop = kHopSize);

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Centered STFT with reflect padding of n_fft/2 at both ends. Frame i covers
/// padded samples [i*hop, i*hop + n_fft).
Spectrum stft(const Waveform& w, std::size_t n_fft = kFftSize, std::size_t hop = kHopSize);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters, [n_mels x (n_fft/2 + 1)], on the HTK mel scale, unnormalized.
Tensor<double> mel_filterbank(std::size_t n_mels = kMelBins, std::size_t n_fft = kFftSize, double sr = kSampleRate,
                              double fmin = 0.0, double fmax = 8000.0);

/// log(max(fb * |stft|, 1e-5)), [T x 80].
Tensor<double> mel_spectrogram(const Waveform& w);

/// 16-bit PCM mono WAV at 16 kHz.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace avdit
