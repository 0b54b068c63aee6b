#pragma once

#include <string>
#include <vector>

#include "engen/common.hpp"
#include "engen/tensor.hpp"

namespace engen {

// Canonical internal rate and frame geometry. hop 294 makes mel frames land
// exactly on codec token frames: 22050 / 294 = 75 frames per second.
constexpr int kSampleRate = 22050;
constexpr int kHop = 294;
constexpr int kFftSize = 1024;
constexpr int kNumMels = 80;
constexpr float kLogFloor = 1e-5f;

struct Waveform {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    double duration_s() const {
        return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0;
    }
};

struct MelSpectrogram {
    Tensor<float> frames; // [n_frames, n_mels], log energies
    int n_mels = kNumMels;
    int hop = kHop;
    int sample_rate = kSampleRate;

    int n_frames() const { return frames.rank() == 2 ? frames.dim(0) : 0; }
};

// Mono 22050 Hz out; accepts PCM16 / float32 RIFF, 1-2 channels, any rate.
Waveform load_wav(const std::string& path);

// PCM16 mono at the waveform's rate.
void save_wav(const std::string& path, const Waveform& w);

// Windowed-sinc; output length is round(n * dst / src).
Waveform resample(const Waveform& w, int dst_rate);

// Contiguous crop, duration uniform in [min_s, max_s]. Inputs shorter than
// min_s pass through unchanged.
Waveform random_crop(const Waveform& w, double min_s, double max_s, Rng& rng);

// Centered STFT -> power -> mel filterbank -> log with floor.
// n_frames = 1 + floor(n_samples / hop).
MelSpectrogram mel_spectrogram(const Waveform& w);

// In-place radix-2 FFT; n must be a power of two. inverse applies 1/n scaling.
void fft_inplace(std::vector<float>& re, std::vector<float>& im, bool inverse);

// Triangular filters on the HTK mel scale, flattened [n_mels x (n_fft/2+1)].
const std::vector<float>& mel_filterbank();

// Periodic Hann of length kFftSize.
const std::vector<float>& hann_window();

} // namespace engen
