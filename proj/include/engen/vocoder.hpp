#pragma once

#include "engen/audio_io.hpp"
#include "engen/autodiff.hpp"
#include "engen/neural_codec.hpp"
#include "engen/speaker_encoder.hpp"

namespace engen {

enum class VocoderMode { kNeural, kDeterministic };

struct VocoderConfig {
    VocoderMode mode = VocoderMode::kNeural;
    int hop = kHop; // must match the mel hop
    int d_spk = kSpkDim;
};

// Transposed-conv generator, upsampling 2*3*7*7 = 294x. The mean-pooled
// speaker vector enters as a per-channel bias after the first layer.
template <typename T>
struct VocoderNet {
    Param<T> pre_w, pre_b;   // [48, 80, 3] pad 1
    Param<T> spk_w, spk_b;   // [d_spk, 48], [48]
    Param<T> u1_w, u1_b;     // tconv [48, 32, 2] s2
    Param<T> u2_w, u2_b;     // tconv [32, 24, 3] s3
    Param<T> u3_w, u3_b;     // tconv [24, 16, 7] s7
    Param<T> u4_w, u4_b;     // tconv [16, 8, 7] s7
    Param<T> post_w, post_b; // [1, 8, 9] pad 4

    static VocoderNet make(uint64_t seed, int d_spk = kSpkDim) {
        Rng rng(seed);
        auto w = [&rng](std::string name, std::vector<int> shape, double fan_in) {
            return Param<T>(std::move(name),
                            Tensor<T>::randn(std::move(shape), rng, T(1.0 / std::sqrt(fan_in))));
        };
        auto b = [](std::string name, int n) {
            return Param<T>(std::move(name), Tensor<T>::zeros({n}));
        };
        VocoderNet v;
        v.pre_w = w("voc.pre_w", {48, kNumMels, 3}, kNumMels * 3.0);
        v.pre_b = b("voc.pre_b", 48);
        v.spk_w = w("voc.spk_w", {d_spk, 48}, double(d_spk));
        v.spk_b = b("voc.spk_b", 48);
        v.u1_w = w("voc.u1_w", {48, 32, 2}, 48.0);
        v.u1_b = b("voc.u1_b", 32);
        v.u2_w = w("voc.u2_w", {32, 24, 3}, 32.0);
        v.u2_b = b("voc.u2_b", 24);
        v.u3_w = w("voc.u3_w", {24, 16, 7}, 24.0);
        v.u3_b = b("voc.u3_b", 16);
        v.u4_w = w("voc.u4_w", {16, 8, 7}, 16.0);
        v.u4_b = b("voc.u4_b", 8);
        v.post_w = w("voc.post_w", {1, 8, 9}, 72.0);
        v.post_b = b("voc.post_b", 1);
        return v;
    }

    // mel node [n_mels, F] -> waveform node [1, F*294]. spk_mean may be null
    // (ablation hook: drops the speaker bias path).
    typename Graph<T>::NodeId forward_graph(Graph<T>& g, typename Graph<T>::NodeId mel,
                                            const Tensor<T>* spk_mean, bool trainable) const {
        const T slope = T(0.2);
        auto x = g.conv1d(mel, param_or_const(g, pre_w, trainable),
                          param_or_const(g, pre_b, trainable), 1, 1);
        if (spk_mean != nullptr) {
            auto s = g.reshape(g.constant(Tensor<T>({1, spk_mean->dim(0)}, spk_mean->data)),
                               {1, spk_mean->dim(0)});
            auto bias = g.linear(s, param_or_const(g, spk_w, trainable),
                                 param_or_const(g, spk_b, trainable));
            x = g.add_channel_bias(x, g.reshape(bias, {48}));
        }
        x = g.leaky_relu(x, slope);
        x = g.conv_transpose1d(x, param_or_const(g, u1_w, trainable),
                               param_or_const(g, u1_b, trainable), 2);
        x = g.leaky_relu(x, slope);
        x = g.conv_transpose1d(x, param_or_const(g, u2_w, trainable),
                               param_or_const(g, u2_b, trainable), 3);
        x = g.leaky_relu(x, slope);
        x = g.conv_transpose1d(x, param_or_const(g, u3_w, trainable),
                               param_or_const(g, u3_b, trainable), 7);
        x = g.leaky_relu(x, slope);
        x = g.conv_transpose1d(x, param_or_const(g, u4_w, trainable),
                               param_or_const(g, u4_b, trainable), 7);
        x = g.leaky_relu(x, slope);
        x = g.conv1d(x, param_or_const(g, post_w, trainable),
                     param_or_const(g, post_b, trainable), 1, 4);
        return g.tanh_(x);
    }

    std::vector<Param<T>*> trainable_params() {
        return {&pre_w, &pre_b, &spk_w, &spk_b, &u1_w, &u1_b, &u2_w, &u2_b,
                &u3_w, &u3_b, &u4_w, &u4_b, &post_w, &post_b};
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        for (auto* p : const_cast<VocoderNet*>(this)->trainable_params()) fn(*p);
    }
};

// Mean over speaker frames; global conditioning vector for the vocoder.
template <typename T>
Tensor<T> mean_pool_rows(const Tensor<T>& x) {
    Tensor<T> out({x.dim(1)});
    for (int i = 0; i < x.dim(0); ++i)
        for (int j = 0; j < x.dim(1); ++j) out.at(j) += x.at(i, j);
    T inv = T(1) / T(std::max(1, x.dim(0)));
    for (int j = 0; j < x.dim(1); ++j) out.at(j) *= inv;
    return out;
}

// Deterministic fallback: iterative phase reconstruction from the log-mel,
// ignoring speaker conditioning. Pure and trainable-state-free.
Waveform phase_reconstruct(const MelSpectrogram& mel, int iterations = 32);

// Dispatches on cfg.mode and enforces the exact n_frames*294 length
// contract.
Waveform vocode(const MelSpectrogram& mel, const Tensor<float>& x_se,
                const VocoderNet<float>* net, const VocoderConfig& cfg);

} // namespace engen
