#pragma once

#include <vector>

#include "engen/audio_io.hpp"
#include "engen/autodiff.hpp"
#include "engen/neural_codec.hpp"

namespace engen {

struct TrainConfig {
    double alpha = 1.2, beta = 0.7, gamma = 0.6;
    double peak_lr = 5e-4;
    int64_t warmup_steps = 32000;
    int64_t total_steps = 800000; // desk-scale runs override this
    int grad_accum = 24;
    int batch = 4;
    int max_seq = 500;
    double adam_beta1 = 0.9, adam_beta2 = 0.999;
    double weight_decay = 0.01;
    uint64_t seed = 0;
    bool train_gan = true; // compute l_gan and update vocoder/discriminator

    void validate() const {
        if (warmup_steps >= total_steps)
            throw UsageError("TrainConfig: warmup_steps must be < total_steps");
        if (max_seq < 2 || max_seq > 604) throw UsageError("TrainConfig: max_seq must be in [2,604]");
        if (grad_accum < 1 || batch < 1) throw UsageError("TrainConfig: grad_accum/batch must be >= 1");
    }
};

struct LossBreakdown {
    double l_ce = 0.0;
    double l_mel = 0.0;
    double l_gan = 0.0;
    double l_total = 0.0;
    int64_t step = 0;
};

// Linear warmup to peak over warmup_steps, then linear decay to 0 at
// total_steps.
double lr_at(int64_t step, const TrainConfig& cfg);

// alpha*l_ce + beta*l_mel + gamma*l_gan, evaluated left to right.
double loss_total(double l_ce, double l_mel, double l_gan, const TrainConfig& cfg);

// Mean NLL (nats/token) over non-PAD positions.
double loss_ce(const Tensor<float>& logits, const std::vector<int>& targets);

// Mean absolute difference over all entries; shapes must match.
double loss_mel(const MelSpectrogram& pred, const MelSpectrogram& target);

// -log(d_out) + mean |pred - ref|; mismatched lengths truncate to the shorter.
double loss_gan_generator(double d_out, const Waveform& pred, const Waveform& ref);

// Non-saturating: -log(d_real) - log(1 - d_fake), inputs clamped at 1e-7.
double discriminator_loss(double d_real, double d_fake);

// Temporal discriminator: 4 strided conv layers with leaky-ReLU, global
// average, sigmoid.
template <typename T>
struct Discriminator {
    Param<T> c1_w, c1_b; // [16,1,9]  s4 p4
    Param<T> c2_w, c2_b; // [24,16,9] s4 p4
    Param<T> c3_w, c3_b; // [32,24,9] s4 p4
    Param<T> c4_w, c4_b; // [1,32,9]  s4 p4

    static Discriminator make(uint64_t seed) {
        Rng rng(seed);
        auto w = [&rng](std::string name, int co, int ci, int k) {
            return Param<T>(std::move(name),
                            Tensor<T>::randn({co, ci, k}, rng, T(1.0 / std::sqrt(double(ci) * k))));
        };
        auto b = [](std::string name, int n) {
            return Param<T>(std::move(name), Tensor<T>::zeros({n}));
        };
        Discriminator d;
        d.c1_w = w("disc.c1_w", 16, 1, 9);
        d.c1_b = b("disc.c1_b", 16);
        d.c2_w = w("disc.c2_w", 24, 16, 9);
        d.c2_b = b("disc.c2_b", 24);
        d.c3_w = w("disc.c3_w", 32, 24, 9);
        d.c3_b = b("disc.c3_b", 32);
        d.c4_w = w("disc.c4_w", 1, 32, 9);
        d.c4_b = b("disc.c4_b", 1);
        return d;
    }

    // wav node [1,N] -> probability node (scalar in (0,1))
    typename Graph<T>::NodeId forward_graph(Graph<T>& g, typename Graph<T>::NodeId wav,
                                            bool trainable) const {
        const T slope = T(0.2);
        auto x = g.conv1d(wav, param_or_const(g, c1_w, trainable),
                          param_or_const(g, c1_b, trainable), 4, 4);
        x = g.leaky_relu(x, slope);
        x = g.conv1d(x, param_or_const(g, c2_w, trainable),
                     param_or_const(g, c2_b, trainable), 4, 4);
        x = g.leaky_relu(x, slope);
        x = g.conv1d(x, param_or_const(g, c3_w, trainable),
                     param_or_const(g, c3_b, trainable), 4, 4);
        x = g.leaky_relu(x, slope);
        x = g.conv1d(x, param_or_const(g, c4_w, trainable),
                     param_or_const(g, c4_b, trainable), 4, 4);
        return g.sigmoid_(g.mean_all(x));
    }

    double forward(const Waveform& w) const {
        if (w.samples.empty()) throw DataError("discriminator: empty waveform");
        Graph<T> g(false);
        Tensor<T> wav({1, int(w.samples.size())});
        for (size_t i = 0; i < w.samples.size(); ++i) wav.data[i] = T(w.samples[i]);
        return double(g.scalar_value(forward_graph(g, g.constant(std::move(wav)), false)));
    }

    std::vector<Param<T>*> trainable_params() {
        return {&c1_w, &c1_b, &c2_w, &c2_b, &c3_w, &c3_b, &c4_w, &c4_b};
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        for (auto* p : const_cast<Discriminator*>(this)->trainable_params()) fn(*p);
    }
};

} // namespace engen
