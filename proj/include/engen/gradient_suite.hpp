#pragma once

// Double-precision finite-difference verification of every trainable
// operation: codec encoder/decoder through the straight-through surrogate,
// a full LM block driven through cross-entropy, the vocoder generator and
// the discriminator. Shared by the `grad-check` CLI command and the
// acceptance suite.

#include <string>
#include <vector>

#include "engen/codec_lm.hpp"
#include "engen/grad_check.hpp"
#include "engen/losses.hpp"
#include "engen/neural_codec.hpp"
#include "engen/vocoder.hpp"

namespace engen {

struct GradSuiteEntry {
    std::string name;
    GradCheckResult result;
};

inline std::vector<GradSuiteEntry> run_gradient_suite(double eps = 1e-4) {
    std::vector<GradSuiteEntry> out;
    using Gd = Graph<double>;

    // ---- full LM block + cross-entropy ----
    {
        LmConfig cfg = LmConfig::custom(16, 2, 1);
        cfg.ffn_dim = 32;
        cfg.max_audio_tokens = 8;
        cfg.d_spk = 12;
        auto lm = CodecLm<double>::make(cfg, 0xA11CE);
        Rng rng(7);
        Tensor<double> x_te = Tensor<double>::randn({3, 16}, rng, 0.8);
        Tensor<double> x_se = Tensor<double>::randn({2, 12}, rng, 0.8);
        std::vector<int> input = {kSosToken, 5, 900, 31};
        std::vector<int> targets = {5, 900, 31, kEosToken};
        std::vector<uint8_t> mask(4, 1);
        auto build = [&](Gd& g) {
            auto logits = lm.forward_graph(g, input, x_te, x_se, true);
            return g.cross_entropy_mean(logits, targets, mask);
        };
        out.push_back({"lm_block", grad_check(lm.trainable_params(), build, eps)});
    }

    // ---- codec encoder/decoder via the straight-through surrogate ----
    {
        auto codec = Codec<double>::make(0xC0DEC, /*code_dim=*/6, /*entries=*/8,
                                         /*c_early=*/4, /*c_late=*/6);
        Rng rng(11);
        const int n = 2 * kFrameSamples; // 2 frames
        Tensor<double> wav({1, n});
        for (auto& v : wav.data) v = 0.4 * rng.normal();
        Tensor<double> target = Tensor<double>::randn({kNumMels, 2}, rng, 0.5);

        // quantization decisions fixed at the base point: the surrogate the
        // straight-through estimator differentiates
        Tensor<double> latents0;
        {
            Gd g0(false);
            latents0 = g0.val(codec.encode_graph(g0, g0.constant(wav), false));
        }
        const int f = latents0.dim(1), cd = codec.code_dim;
        Tensor<double> q_sum({cd, f});
        std::vector<std::vector<int>> stage_ids(kRvqStages, std::vector<int>(static_cast<size_t>(f)));
        std::vector<Tensor<double>> stage_resid(kRvqStages, Tensor<double>({f, cd}));
        std::vector<double> frame(static_cast<size_t>(cd));
        for (int t = 0; t < f; ++t) {
            for (int j = 0; j < cd; ++j) frame[size_t(j)] = latents0.at(j, t);
            for (int s = 0; s < kRvqStages; ++s) {
                for (int j = 0; j < cd; ++j) stage_resid[size_t(s)].at(t, j) = frame[size_t(j)];
                const Tensor<double>& book = codec.rvq.stages[size_t(s)].value;
                int best = 0;
                double best_d2 = std::numeric_limits<double>::infinity();
                for (int e = 0; e < book.dim(0); ++e) {
                    double d2 = 0.0;
                    for (int j = 0; j < cd; ++j) {
                        double d = frame[size_t(j)] - book.at(e, j);
                        d2 += d * d;
                    }
                    if (d2 < best_d2) {
                        best_d2 = d2;
                        best = e;
                    }
                }
                stage_ids[size_t(s)][size_t(t)] = best;
                for (int j = 0; j < cd; ++j) {
                    frame[size_t(j)] -= book.at(best, j);
                    q_sum.at(j, t) += book.at(best, j);
                }
            }
        }
        Tensor<double> offset({cd, f});
        for (size_t i = 0; i < offset.data.size(); ++i)
            offset.data[i] = q_sum.data[i] - latents0.data[i];

        auto build = [&](Gd& g) {
            auto latents = codec.encode_graph(g, g.constant(wav), true);
            auto zq = g.add_const(latents, offset);
            auto pred = codec.decode_graph(g, zq, true);
            auto loss = g.mae_mean(pred, g.constant(target));
            auto commit_d = g.sub(latents, g.constant(q_sum));
            loss = g.add(loss, g.scale(g.mean_all(g.mul(commit_d, commit_d)), 0.25));
            for (int s = 0; s < kRvqStages; ++s) {
                auto rows = g.gather_rows(g.param(codec.rvq.stages[size_t(s)]),
                                          stage_ids[size_t(s)]);
                auto d = g.sub(rows, g.constant(stage_resid[size_t(s)]));
                loss = g.add(loss, g.mean_all(g.mul(d, d)));
            }
            return loss;
        };
        out.push_back({"codec_straight_through", grad_check(codec.trainable_params(), build, eps)});
    }

    // ---- vocoder generator ----
    {
        auto voc = VocoderNet<double>::make(0x70C, /*d_spk=*/12);
        Rng rng(13);
        Tensor<double> mel = Tensor<double>::randn({kNumMels, 2}, rng, 0.5);
        Tensor<double> spk = Tensor<double>::randn({12}, rng, 0.5);
        Tensor<double> target = Tensor<double>::randn({1, 2 * kFrameSamples}, rng, 0.2);
        auto build = [&](Gd& g) {
            auto wav = voc.forward_graph(g, g.constant(mel), &spk, true);
            return g.mae_mean(wav, g.constant(target));
        };
        out.push_back({"vocoder_generator", grad_check(voc.trainable_params(), build, eps)});
    }

    // ---- discriminator ----
    {
        auto disc = Discriminator<double>::make(0xD15C);
        Rng rng(17);
        Tensor<double> real({1, 400}), fake({1, 400});
        for (auto& v : real.data) v = 0.3 * rng.normal();
        for (auto& v : fake.data) v = 0.3 * rng.normal();
        auto build = [&](Gd& g) {
            auto one = g.constant(Tensor<double>::scalar(1.0));
            auto d_real = disc.forward_graph(g, g.constant(real), true);
            auto d_fake = disc.forward_graph(g, g.constant(fake), true);
            return g.add(g.scale(g.log_(g.clamp(d_real, 1e-7, 1.0)), -1.0),
                         g.scale(g.log_(g.clamp(g.sub(one, d_fake), 1e-7, 1.0)), -1.0));
        };
        out.push_back({"discriminator", grad_check(disc.trainable_params(), build, eps)});
    }

    return out;
}

} // namespace engen
