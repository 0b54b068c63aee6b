#pragma once

#include "engen/audio_io.hpp"
#include "engen/common.hpp"
#include "engen/tensor.hpp"

namespace engen {

constexpr int kSpkDim = 256;
constexpr uint64_t kSpeakerEncoderSeed = 0x5EA;
constexpr int kSpkSmoothWindow = 15;

// Frozen spectral-projection speaker encoder: mel frames -> fixed affine map
// -> centered moving-average smoothing -> unit-norm rows. One latent per mel
// frame, so the output length tracks the reference length.
template <typename T>
struct SpeakerEncoder {
    Tensor<T> proj_w; // [n_mels, d_spk]
    Tensor<T> proj_b; // [d_spk]
    int d_spk = kSpkDim;
    int window = kSpkSmoothWindow;

    static SpeakerEncoder make(uint64_t seed = kSpeakerEncoderSeed, int d_spk = kSpkDim) {
        Rng rng(seed);
        SpeakerEncoder enc;
        enc.d_spk = d_spk;
        enc.proj_w = Tensor<T>::randn({kNumMels, d_spk}, rng, T(0.3));
        enc.proj_b = Tensor<T>::randn({d_spk}, rng, T(0.05));
        return enc;
    }

    // [n_ref_frames x d_spk], rows unit Euclidean norm.
    Tensor<T> latents(const Waveform& ref) const {
        if (ref.duration_s() < 0.5)
            throw DataError("speaker reference shorter than 0.5 s");
        MelSpectrogram mel = mel_spectrogram(ref);
        const int f = mel.n_frames();
        Tensor<T> proj({f, d_spk});
        for (int i = 0; i < f; ++i) {
            const float* mr = mel.frames.row(i);
            T* out = proj.row(i);
            for (int j = 0; j < d_spk; ++j) {
                T acc = proj_b.at(j);
                for (int c = 0; c < kNumMels; ++c) acc += T(mr[c]) * proj_w.at(c, j);
                out[j] = acc;
            }
        }
        // centered moving average, window clipped at the edges
        Tensor<T> smooth({f, d_spk});
        const int half = window / 2;
        for (int i = 0; i < f; ++i) {
            int lo = std::max(0, i - half), hi = std::min(f - 1, i + half);
            T inv = T(1) / T(hi - lo + 1);
            T* out = smooth.row(i);
            for (int j = 0; j < d_spk; ++j) {
                T acc = T(0);
                for (int r = lo; r <= hi; ++r) acc += proj.at(r, j);
                out[j] = acc * inv;
            }
        }
        for (int i = 0; i < f; ++i) {
            T* r2 = smooth.row(i);
            T norm = T(0);
            for (int j = 0; j < d_spk; ++j) norm += r2[j] * r2[j];
            norm = std::sqrt(norm);
            T inv = T(1) / std::max(norm, T(1e-20));
            for (int j = 0; j < d_spk; ++j) r2[j] *= inv;
        }
        return smooth;
    }

    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        fn("spk.proj_w", proj_w);
        fn("spk.proj_b", proj_b);
    }
};

} // namespace engen
