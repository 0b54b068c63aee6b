#include "engen/vocoder.hpp"

#include <cmath>

namespace engen {

namespace {

struct Spectra {
    // [F][n_bins] magnitude/real/imag
    std::vector<std::vector<float>> mag, re, im;
};

constexpr int kBins = kFftSize / 2 + 1;

// centered analysis frames at t*hop, zero-padded edges
void stft_frames(const std::vector<float>& x, int n_frames, Spectra& s) {
    const auto& win = hann_window();
    std::vector<float> re(kFftSize), im(kFftSize);
    s.re.assign(size_t(n_frames), std::vector<float>(kBins));
    s.im.assign(size_t(n_frames), std::vector<float>(kBins));
    const int64_t n = int64_t(x.size());
    for (int t = 0; t < n_frames; ++t) {
        int64_t start = int64_t(t) * kHop - kFftSize / 2;
        for (int i = 0; i < kFftSize; ++i) {
            int64_t idx = start + i;
            float v = (idx >= 0 && idx < n) ? x[size_t(idx)] : 0.0f;
            re[size_t(i)] = v * win[size_t(i)];
            im[size_t(i)] = 0.0f;
        }
        fft_inplace(re, im, false);
        for (int k = 0; k < kBins; ++k) {
            s.re[size_t(t)][size_t(k)] = re[size_t(k)];
            s.im[size_t(t)][size_t(k)] = im[size_t(k)];
        }
    }
}

// inverse with synthesis window and squared-window normalization; returns
// exactly n_frames*hop samples
std::vector<float> istft_frames(const Spectra& s, int n_frames) {
    const auto& win = hann_window();
    const int64_t pad_len = int64_t(n_frames - 1) * kHop + kFftSize;
    std::vector<double> acc(size_t(pad_len), 0.0), wsum(size_t(pad_len), 0.0);
    std::vector<float> re(kFftSize), im(kFftSize);
    for (int t = 0; t < n_frames; ++t) {
        // rebuild the hermitian spectrum from bins 0..512
        for (int k = 0; k < kBins; ++k) {
            re[size_t(k)] = s.re[size_t(t)][size_t(k)];
            im[size_t(k)] = s.im[size_t(t)][size_t(k)];
        }
        for (int k = kBins; k < kFftSize; ++k) {
            re[size_t(k)] = re[size_t(kFftSize - k)];
            im[size_t(k)] = -im[size_t(kFftSize - k)];
        }
        fft_inplace(re, im, true);
        int64_t off = int64_t(t) * kHop;
        for (int i = 0; i < kFftSize; ++i) {
            acc[size_t(off + i)] += double(re[size_t(i)]) * double(win[size_t(i)]);
            wsum[size_t(off + i)] += double(win[size_t(i)]) * double(win[size_t(i)]);
        }
    }
    // signal sample s lives at padded index s + fft/2 (frame 0 is centered at 0)
    std::vector<float> out(size_t(n_frames) * size_t(kHop));
    for (size_t i = 0; i < out.size(); ++i) {
        size_t idx = i + kFftSize / 2;
        out[i] = float(acc[idx] / std::max(wsum[idx], 1e-9));
    }
    return out;
}

} // namespace

Waveform phase_reconstruct(const MelSpectrogram& mel, int iterations) {
    const int f = mel.n_frames();
    if (f == 0) throw DataError("phase_reconstruct: empty mel");
    const auto& fb = mel_filterbank();

    // approximate linear power spectrum: convert each mel energy to a
    // per-bin density (divide by the filter area), then blend overlapping
    // filters with normalized weights; exact for flat spectra
    std::vector<double> area(kNumMels, 0.0), col_norm(size_t(kBins), 0.0);
    for (int m = 0; m < kNumMels; ++m)
        for (int k = 0; k < kBins; ++k) {
            area[size_t(m)] += double(fb[size_t(m) * kBins + size_t(k)]);
            col_norm[size_t(k)] += double(fb[size_t(m) * kBins + size_t(k)]);
        }
    Spectra s;
    s.mag.assign(size_t(f), std::vector<float>(kBins));
    for (int t = 0; t < f; ++t) {
        const float* mr = mel.frames.row(t);
        for (int k = 0; k < kBins; ++k) {
            double p = 0.0;
            for (int m = 0; m < kNumMels; ++m) {
                double w = double(fb[size_t(m) * kBins + size_t(k)]);
                // energy at the log floor is indistinguishable from silence;
                // subtract it so floored bins invert to zero
                double e = std::max(std::exp(double(mr[m])) - double(kLogFloor), 0.0);
                if (w > 0.0) p += w * e / std::max(area[size_t(m)], 1e-9);
            }
            p /= std::max(col_norm[size_t(k)], 1e-6);
            s.mag[size_t(t)][size_t(k)] = float(std::sqrt(std::max(p, 0.0)));
        }
    }

    // zero initial phase, then alternate projections
    s.re = s.mag;
    s.im.assign(size_t(f), std::vector<float>(kBins, 0.0f));
    std::vector<float> x;
    for (int it = 0; it < iterations; ++it) {
        x = istft_frames(s, f);
        Spectra est;
        stft_frames(x, f, est);
        for (int t = 0; t < f; ++t)
            for (int k = 0; k < kBins; ++k) {
                float er = est.re[size_t(t)][size_t(k)];
                float ei = est.im[size_t(t)][size_t(k)];
                float norm = std::sqrt(er * er + ei * ei);
                float m = s.mag[size_t(t)][size_t(k)];
                if (norm > 1e-12f) {
                    s.re[size_t(t)][size_t(k)] = m * er / norm;
                    s.im[size_t(t)][size_t(k)] = m * ei / norm;
                } else {
                    s.re[size_t(t)][size_t(k)] = m;
                    s.im[size_t(t)][size_t(k)] = 0.0f;
                }
            }
    }
    x = istft_frames(s, f);

    Waveform w;
    w.sample_rate = kSampleRate;
    w.samples = std::move(x);
    for (float& v : w.samples) v = std::clamp(v, -1.0f, 1.0f);
    return w;
}

Waveform vocode(const MelSpectrogram& mel, const Tensor<float>& x_se,
                const VocoderNet<float>* net, const VocoderConfig& cfg) {
    if (mel.n_frames() == 0) throw DataError("vocode: empty mel");
    if (cfg.hop != mel.hop) throw DataError("vocode: hop mismatch");
    if (cfg.mode == VocoderMode::kDeterministic) return phase_reconstruct(mel);
    if (net == nullptr) throw ModelError("vocode: neural mode without a vocoder network");

    const int f = mel.n_frames();
    Graph<float> g(false);
    Tensor<float> mel_t({kNumMels, f});
    for (int t = 0; t < f; ++t)
        for (int m = 0; m < kNumMels; ++m) mel_t.at(m, t) = mel.frames.at(t, m);
    Tensor<float> spk = mean_pool_rows(x_se);
    auto out = g.val(net->forward_graph(g, g.constant(std::move(mel_t)), &spk, false));

    Waveform w;
    w.sample_rate = mel.sample_rate;
    w.samples.assign(out.data.begin(), out.data.end());
    w.samples.resize(size_t(f) * size_t(cfg.hop), 0.0f); // exact length contract
    return w;
}

} // namespace engen
