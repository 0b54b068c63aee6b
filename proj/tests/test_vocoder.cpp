#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "engen/training.hpp"
#include "engen/vocoder.hpp"
#include "test_support.hpp"

using namespace engen;
using namespace engen::test;

namespace {

// Independent phase-reconstruction oracle: naive DFT/IDFT, double precision,
// same analysis geometry (centered frames, periodic Hann, hop 294).
Waveform gl_oracle(const MelSpectrogram& mel, int iterations) {
    const int n_bins = kFftSize / 2 + 1;
    const int f = mel.n_frames();
    std::vector<double> win(kFftSize);
    for (int i = 0; i < kFftSize; ++i)
        win[size_t(i)] = 0.5 * (1.0 - std::cos(2.0 * kTestPi * i / kFftSize));

    // per-bin magnitudes via the same density inversion contract
    const auto& fb = mel_filterbank();
    std::vector<double> area(kNumMels, 0.0), colw(static_cast<size_t>(n_bins), 0.0);
    for (int m = 0; m < kNumMels; ++m)
        for (int k = 0; k < n_bins; ++k) {
            area[size_t(m)] += double(fb[size_t(m) * size_t(n_bins) + size_t(k)]);
            colw[size_t(k)] += double(fb[size_t(m) * size_t(n_bins) + size_t(k)]);
        }
    std::vector<std::vector<double>> mag(size_t(f), std::vector<double>(static_cast<size_t>(n_bins)));
    for (int t = 0; t < f; ++t)
        for (int k = 0; k < n_bins; ++k) {
            double p = 0.0;
            for (int m = 0; m < kNumMels; ++m) {
                double w = double(fb[size_t(m) * size_t(n_bins) + size_t(k)]);
                double e = std::max(std::exp(double(mel.frames.at(t, m))) - double(kLogFloor), 0.0);
                if (w > 0.0) p += w * e / std::max(area[size_t(m)], 1e-9);
            }
            p /= std::max(colw[size_t(k)], 1e-6);
            mag[size_t(t)][size_t(k)] = std::sqrt(std::max(p, 0.0));
        }

    std::vector<std::vector<double>> re(static_cast<size_t>(f)), im(static_cast<size_t>(f));
    for (int t = 0; t < f; ++t) {
        re[size_t(t)] = mag[size_t(t)];
        im[size_t(t)].assign(static_cast<size_t>(n_bins), 0.0);
    }
    const int64_t pad_len = int64_t(f - 1) * kHop + kFftSize;
    std::vector<double> x;
    auto istft = [&]() {
        std::vector<double> acc(size_t(pad_len), 0.0), wsum(size_t(pad_len), 0.0);
        for (int t = 0; t < f; ++t) {
            // hermitian expansion + naive inverse DFT
            std::vector<double> frame(kFftSize, 0.0);
            for (int i = 0; i < kFftSize; ++i) {
                double acc_r = 0.0;
                for (int k = 0; k < kFftSize; ++k) {
                    int kk = k < n_bins ? k : kFftSize - k;
                    double rr = re[size_t(t)][size_t(kk)];
                    double ii = k < n_bins ? im[size_t(t)][size_t(kk)] : -im[size_t(t)][size_t(kk)];
                    double ang = 2.0 * kTestPi * double(k) * double(i) / kFftSize;
                    acc_r += rr * std::cos(ang) - ii * std::sin(ang);
                }
                frame[size_t(i)] = acc_r / kFftSize;
            }
            int64_t off = int64_t(t) * kHop;
            for (int i = 0; i < kFftSize; ++i) {
                acc[size_t(off + i)] += frame[size_t(i)] * win[size_t(i)];
                wsum[size_t(off + i)] += win[size_t(i)] * win[size_t(i)];
            }
        }
        x.assign(size_t(f) * size_t(kHop), 0.0);
        for (size_t i = 0; i < x.size(); ++i)
            x[i] = acc[i + kFftSize / 2] / std::max(wsum[i + kFftSize / 2], 1e-9);
    };
    auto stft = [&]() {
        for (int t = 0; t < f; ++t) {
            int64_t start = int64_t(t) * kHop - kFftSize / 2;
            for (int k = 0; k < n_bins; ++k) {
                double rr = 0.0, ii = 0.0;
                for (int i = 0; i < kFftSize; ++i) {
                    int64_t idx = start + i;
                    double v = (idx >= 0 && idx < int64_t(x.size())) ? x[size_t(idx)] : 0.0;
                    v *= win[size_t(i)];
                    double ang = -2.0 * kTestPi * double(k) * double(i) / kFftSize;
                    rr += v * std::cos(ang);
                    ii += v * std::sin(ang);
                }
                double norm = std::sqrt(rr * rr + ii * ii);
                if (norm > 1e-12) {
                    re[size_t(t)][size_t(k)] = mag[size_t(t)][size_t(k)] * rr / norm;
                    im[size_t(t)][size_t(k)] = mag[size_t(t)][size_t(k)] * ii / norm;
                } else {
                    re[size_t(t)][size_t(k)] = mag[size_t(t)][size_t(k)];
                    im[size_t(t)][size_t(k)] = 0.0;
                }
            }
        }
    };
    for (int it = 0; it < iterations; ++it) {
        istft();
        stft();
    }
    istft();
    Waveform w;
    w.sample_rate = kSampleRate;
    w.samples.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) w.samples[i] = float(x[i]);
    return w;
}

Tensor<float> mel_to_conv_layout(const MelSpectrogram& mel) {
    Tensor<float> t({kNumMels, mel.n_frames()});
    for (int i = 0; i < mel.n_frames(); ++i)
        for (int m = 0; m < kNumMels; ++m) t.at(m, i) = mel.frames.at(i, m);
    return t;
}

} // namespace

TEST_CASE("vocode: exact length contract in both modes") {
    Waveform src = make_sine(440.0, 1.0);
    MelSpectrogram mel = mel_spectrogram(src);
    REQUIRE(mel.n_frames() == 76);

    VocoderConfig det;
    det.mode = VocoderMode::kDeterministic;
    Tensor<float> x_se({1, kSpkDim});
    Waveform a = vocode(mel, x_se, nullptr, det);
    CHECK(a.samples.size() == 76u * 294u);

    auto net = VocoderNet<float>::make(5);
    VocoderConfig neural;
    Rng rng(6);
    Tensor<float> se = Tensor<float>::randn({10, kSpkDim}, rng, 0.5f);
    Waveform b = vocode(mel, se, &net, neural);
    CHECK(b.samples.size() == 76u * 294u);

    MelSpectrogram empty;
    empty.frames = Tensor<float>({0, kNumMels});
    CHECK_THROWS_AS(vocode(empty, x_se, &net, neural), DataError);
}

TEST_CASE("deterministic mode: silence mel stays below 1e-3 peak (oracle-checked)") {
    MelSpectrogram mel;
    mel.frames = Tensor<float>::full({8, kNumMels}, std::log(kLogFloor));
    mel.hop = kHop;

    Waveform oracle = gl_oracle(mel, 32);
    float oracle_peak = 0.0f;
    for (float s : oracle.samples) oracle_peak = std::max(oracle_peak, std::abs(s));
    CHECK(oracle_peak < 1e-3f);

    Waveform impl = phase_reconstruct(mel);
    float impl_peak = 0.0f;
    for (float s : impl.samples) impl_peak = std::max(impl_peak, std::abs(s));
    CHECK(impl_peak < 1e-3f);
}

TEST_CASE("deterministic mode: pure and bitwise reproducible") {
    Waveform src = make_speaker_signal(140.0, 1100.0, 0.5, 9);
    MelSpectrogram mel = mel_spectrogram(src);
    Waveform a = phase_reconstruct(mel);
    Waveform b = phase_reconstruct(mel);
    REQUIRE(a.samples.size() == b.samples.size());
    CHECK(std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(float)) == 0);
}

TEST_CASE("deterministic mode: tone energy roughly preserved") {
    Waveform src = make_sine(440.0, 1.0, 0.5);
    Waveform rec = phase_reconstruct(mel_spectrogram(src));
    double src_rms = 0.0, rec_rms = 0.0;
    for (float s : src.samples) src_rms += double(s) * s;
    for (float s : rec.samples) rec_rms += double(s) * s;
    src_rms = std::sqrt(src_rms / double(src.samples.size()));
    rec_rms = std::sqrt(rec_rms / double(rec.samples.size()));
    CHECK(rec_rms == doctest::Approx(src_rms).epsilon(0.15));
}

TEST_CASE("neural mode: deterministic given fixed weights") {
    auto net = VocoderNet<float>::make(7);
    Waveform src = make_sine(330.0, 0.4);
    MelSpectrogram mel = mel_spectrogram(src);
    Rng rng(8);
    Tensor<float> se = Tensor<float>::randn({6, kSpkDim}, rng, 0.5f);
    VocoderConfig cfg;
    Waveform a = vocode(mel, se, &net, cfg);
    Waveform b = vocode(mel, se, &net, cfg);
    CHECK(std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(float)) == 0);
}

TEST_CASE("neural mode: speaker bias path changes the output") {
    auto net = VocoderNet<float>::make(9);
    Waveform src = make_sine(330.0, 0.3);
    MelSpectrogram mel = mel_spectrogram(src);
    Tensor<float> mel_t = mel_to_conv_layout(mel);
    Rng rng(10);
    Tensor<float> spk = Tensor<float>::randn({kSpkDim}, rng, 0.5f);

    Graph<float> g(false);
    auto with_spk = g.val(net.forward_graph(g, g.constant(mel_t), &spk, false));
    auto without = g.val(net.forward_graph(g, g.constant(mel_t), nullptr, false));
    float max_diff = 0.0f;
    for (size_t i = 0; i < with_spk.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(with_spk.data[i] - without.data[i]));
    CHECK(max_diff > 0.0f);
}

TEST_CASE("train_vocoder: waveform L1 descends; discriminator stays in (0,1)") {
    auto spk_enc = SpeakerEncoder<float>::make();
    std::vector<VocoderPair> pairs;
    for (int i = 0; i < 10; ++i) {
        Waveform w = make_speaker_signal(110.0 + 15.0 * i, 800.0 + 70.0 * i, 0.5, uint64_t(i));
        int f = int(w.samples.size()) / kFrameSamples;
        MelSpectrogram mel = mel_spectrogram(w);
        VocoderPair p;
        p.mel_t = Tensor<float>({kNumMels, f});
        for (int t = 0; t < f; ++t)
            for (int m = 0; m < kNumMels; ++m) p.mel_t.at(m, t) = mel.frames.at(t, m);
        p.wav = Tensor<float>({1, f * kFrameSamples});
        std::copy_n(w.samples.data(), size_t(f) * kFrameSamples, p.wav.data.data());
        p.spk_mean = mean_pool_rows(spk_enc.latents(w));
        pairs.push_back(std::move(p));
    }
    auto voc = VocoderNet<float>::make(20);
    auto disc = Discriminator<float>::make(21);
    VocoderTrainConfig cfg;
    cfg.steps = 200;
    VocoderTrainStats stats = train_vocoder(voc, disc, pairs, cfg);
    CHECK(stats.final_l1 < stats.initial_l1);

    // discriminator outputs remain proper probabilities after training
    for (const auto& p : pairs) {
        Waveform w;
        w.sample_rate = kSampleRate;
        w.samples.assign(p.wav.data.begin(), p.wav.data.end());
        double d = disc.forward(w);
        CHECK(d > 0.0);
        CHECK(d < 1.0);
    }

    CHECK_THROWS_AS(train_vocoder(voc, disc, {}, cfg), DataError);
}
