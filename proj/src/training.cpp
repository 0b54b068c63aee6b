#include "engen/training.hpp"

#include <cmath>
#include <fstream>

namespace engen {

namespace {

using G = Graph<float>;

Tensor<float> waveform_tensor(const Waveform& w, size_t n) {
    Tensor<float> t({1, int(n)});
    std::copy_n(w.samples.data(), n, t.data.data());
    return t;
}

// mel frames 0..f-1 transposed to conv layout [n_mels, f]
Tensor<float> mel_target_t(const MelSpectrogram& mel, int f) {
    Tensor<float> t({kNumMels, f});
    for (int i = 0; i < f; ++i)
        for (int m = 0; m < kNumMels; ++m) t.at(m, i) = mel.frames.at(i, m);
    return t;
}

} // namespace

namespace {

// Seed codebook entries 1..E-1 from actual encoder latents so quantization
// starts with live competitors to the pinned zero entry. Stage s draws from
// the residual distribution left by stages < s.
void bootstrap_codebooks(Codec<float>& codec, const std::vector<Waveform>& corpus, Rng& rng) {
    const int cd = codec.code_dim;
    std::vector<std::vector<float>> frames;
    for (size_t w = 0; w < corpus.size() && frames.size() < 4096; ++w) {
        if (int(corpus[w].samples.size()) < kFrameSamples) continue;
        size_t cap = std::min<size_t>(corpus[w].samples.size(), 3 * kSampleRate);
        G g(false);
        Tensor<float> wav({1, int(cap)});
        std::copy_n(corpus[w].samples.data(), cap, wav.data.data());
        const Tensor<float>& lat = g.val(codec.encode_graph(g, g.constant(std::move(wav)), false));
        for (int t = 0; t < lat.dim(1); ++t) {
            std::vector<float> fr(static_cast<size_t>(cd));
            for (int j = 0; j < cd; ++j) fr[size_t(j)] = lat.at(j, t);
            frames.push_back(std::move(fr));
        }
    }
    if (frames.empty()) return;
    std::vector<std::vector<float>> residuals = frames;
    for (int s = 0; s < kRvqStages; ++s) {
        Tensor<float>& book = codec.rvq.stages[size_t(s)].value;
        for (int e = 1; e < book.dim(0); ++e) {
            const auto& src = residuals[size_t(rng.uniform_int(0, int64_t(residuals.size()) - 1))];
            for (int j = 0; j < cd; ++j)
                book.at(e, j) = src[size_t(j)] * (1.0f + 0.05f * float(rng.normal()));
        }
        for (auto& r : residuals) {
            int best = 0;
            double best_d2 = std::numeric_limits<double>::infinity();
            for (int e = 0; e < book.dim(0); ++e) {
                const float* row = book.row(e);
                double d2 = 0.0;
                for (int j = 0; j < cd; ++j) {
                    double d = double(r[size_t(j)]) - double(row[j]);
                    d2 += d * d;
                }
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = e;
                }
            }
            const float* row = book.row(best);
            for (int j = 0; j < cd; ++j) r[size_t(j)] -= row[j];
        }
    }
}

} // namespace

CodecTrainStats train_codec(Codec<float>& codec, const std::vector<Waveform>& corpus,
                            const CodecTrainConfig& cfg) {
    if (corpus.empty()) throw DataError("train_codec: empty corpus");
    if (codec.frozen) throw ModelError("train_codec: codec already frozen");
    auto params = codec.trainable_params();
    AdamW<float> opt(params, 0.9f, 0.999f, 1e-8f, 0.0f);
    Rng rng(cfg.seed);
    bootstrap_codebooks(codec, corpus, rng);
    CodecTrainStats stats;
    const int cd = codec.code_dim;

    // dead-entry bookkeeping: codes unused over a window get reseeded onto
    // the live residual distribution so a single winner cannot absorb the
    // whole latent cloud
    const int reseed_every = 10;
    const int entries = codec.rvq.stages[0].value.dim(0);
    std::vector<std::vector<int64_t>> usage(kRvqStages,
                                            std::vector<int64_t>(static_cast<size_t>(entries), 0));
    std::vector<std::vector<std::vector<float>>> resid_pool(kRvqStages);

    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        double step_recon = 0.0;
        int used = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            const Waveform& base = corpus[size_t(rng.uniform_int(0, int64_t(corpus.size()) - 1))];
            Waveform w = random_crop(base, cfg.crop_min_s, cfg.crop_max_s, rng);
            if (int(w.samples.size()) < kFrameSamples) continue;
            G g(true);
            auto wav = g.constant(waveform_tensor(w, w.samples.size()));
            auto latents = codec.encode_graph(g, wav, /*trainable=*/true);
            const Tensor<float>& lv = g.val(latents);
            const int f = lv.dim(1);

            // quantize out of graph; decisions stay fixed for this step
            Tensor<float> q_sum({cd, f});
            std::vector<std::vector<int>> stage_ids(kRvqStages, std::vector<int>(static_cast<size_t>(f)));
            std::vector<Tensor<float>> stage_resid;
            for (int s = 0; s < kRvqStages; ++s) stage_resid.emplace_back(std::vector<int>{f, cd});
            std::vector<float> frame(static_cast<size_t>(cd));
            for (int t = 0; t < f; ++t) {
                for (int j = 0; j < cd; ++j) frame[size_t(j)] = lv.at(j, t);
                for (int s = 0; s < kRvqStages; ++s) {
                    for (int j = 0; j < cd; ++j) stage_resid[size_t(s)].at(t, j) = frame[size_t(j)];
                    const Tensor<float>& book = codec.rvq.stages[size_t(s)].value;
                    int best = 0;
                    double best_d2 = std::numeric_limits<double>::infinity();
                    for (int e = 0; e < book.dim(0); ++e) {
                        const float* row = book.row(e);
                        double d2 = 0.0;
                        for (int j = 0; j < cd; ++j) {
                            double d = double(frame[size_t(j)]) - double(row[j]);
                            d2 += d * d;
                        }
                        if (d2 < best_d2) {
                            best_d2 = d2;
                            best = e;
                        }
                    }
                    stage_ids[size_t(s)][size_t(t)] = best;
                    ++usage[size_t(s)][size_t(best)];
                    auto& pool = resid_pool[size_t(s)];
                    if (pool.size() < 2048)
                        pool.emplace_back(frame.begin(), frame.end());
                    else
                        pool[size_t(rng.uniform_int(0, 2047))].assign(frame.begin(), frame.end());
                    const float* row = book.row(best);
                    for (int j = 0; j < cd; ++j) {
                        frame[size_t(j)] -= row[j];
                        q_sum.at(j, t) += row[j];
                    }
                }
            }

            // straight-through: z_q = e + const(q - e)
            Tensor<float> offset({cd, f});
            for (size_t i = 0; i < offset.data.size(); ++i)
                offset.data[i] = q_sum.data[i] - lv.data[i];
            auto zq = g.add_const(latents, offset);
            auto pred = codec.decode_graph(g, zq, /*trainable=*/true);

            MelSpectrogram mel = mel_spectrogram(w);
            auto target = g.constant(mel_target_t(mel, f));
            auto l1 = g.mae_mean(pred, target);

            auto commit_d = g.sub(latents, g.constant(q_sum));
            auto commit = g.mean_all(g.mul(commit_d, commit_d));
            auto loss = g.add(l1, g.scale(commit, float(cfg.commit_weight)));
            for (int s = 0; s < kRvqStages; ++s) {
                auto rows = g.gather_rows(g.param(codec.rvq.stages[size_t(s)]),
                                          stage_ids[size_t(s)]);
                auto d = g.sub(rows, g.constant(stage_resid[size_t(s)]));
                loss = g.add(loss, g.mean_all(g.mul(d, d)));
            }
            g.backward(g.scale(loss, 1.0f / float(cfg.batch)));
            double l1v = double(g.scalar_value(l1));
            if (!std::isfinite(l1v) || !std::isfinite(double(g.scalar_value(loss))))
                throw ModelError("train_codec diverged at step " + std::to_string(step));
            step_recon += l1v;
            ++used;
        }
        if (used > 0) step_recon /= used;
        opt.step(float(cfg.lr));
        codec.rvq.pin_zero_entry();
        if ((step + 1) % reseed_every == 0) {
            for (int s = 0; s < kRvqStages; ++s) {
                auto& pool = resid_pool[size_t(s)];
                if (pool.empty()) continue;
                Tensor<float>& book = codec.rvq.stages[size_t(s)].value;
                for (int e = 1; e < entries; ++e) {
                    if (usage[size_t(s)][size_t(e)] > 0) continue;
                    const auto& src = pool[size_t(rng.uniform_int(0, int64_t(pool.size()) - 1))];
                    for (int j = 0; j < cd; ++j)
                        book.at(e, j) = src[size_t(j)] * (1.0f + 0.02f * float(rng.normal()));
                }
                std::fill(usage[size_t(s)].begin(), usage[size_t(s)].end(), 0);
            }
        }
        if (step == 0) stats.initial_recon = step_recon;
        stats.final_recon = step_recon;
    }
    codec.frozen = true;
    return stats;
}

LmTrainSample make_lm_sample(const Waveform& crop, const std::string& text,
                             const Waveform& reference, const BpeModel& bpe,
                             const TextEncoder<float>& text_enc, const Codec<float>& codec,
                             const SpeakerEncoder<float>& spk_enc, int max_seq) {
    LmTrainSample s;
    TokenSequence seq = select_first_codebook(codec.encode_audio(crop));
    s.tokens = seq.tokens;
    if (int(s.tokens.size()) > max_seq - 1) s.tokens.resize(size_t(max_seq - 1));
    if (s.tokens.empty()) throw DataError("make_lm_sample: clip too short to tokenize");
    const int n = int(s.tokens.size());
    s.x_te = text_enc.encode(bpe_encode(bpe, text)).cast<float>();
    s.x_se = spk_enc.latents(reference);
    s.gt_mel_t = mel_target_t(mel_spectrogram(crop), n);
    s.gt_wav = waveform_tensor(crop, size_t(n) * size_t(kFrameSamples));
    s.spk_mean = mean_pool_rows(s.x_se);
    return s;
}

LmTrainingRun::LmTrainingRun(CodecLm<float>& lm, const Codec<float>& codec,
                             VocoderNet<float>* vocoder, Discriminator<float>* disc,
                             std::vector<LmTrainSample> dataset, const TrainConfig& cfg,
                             const std::string& loss_log_path)
    : lm_(lm), codec_(codec), vocoder_(vocoder), disc_(disc), dataset_(std::move(dataset)),
      cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    if (dataset_.empty()) throw DataError("LM training: empty dataset");
    if (!codec_.frozen) throw ModelError("LM training requires a frozen codec");
    gan_on_ = cfg_.train_gan && vocoder_ != nullptr && disc_ != nullptr;
    lm_opt_ = std::make_unique<AdamW<float>>(lm_.trainable_params(), float(cfg_.adam_beta1),
                                             float(cfg_.adam_beta2), 1e-8f,
                                             float(cfg_.weight_decay));
    if (gan_on_) {
        voc_opt_ = std::make_unique<AdamW<float>>(vocoder_->trainable_params(),
                                                  float(cfg_.adam_beta1), float(cfg_.adam_beta2),
                                                  1e-8f, 0.0f);
        disc_opt_ = std::make_unique<AdamW<float>>(disc_->trainable_params(),
                                                   float(cfg_.adam_beta1), float(cfg_.adam_beta2),
                                                   1e-8f, 0.0f);
    }
    if (!loss_log_path.empty()) {
        log_ = std::make_unique<std::ofstream>(loss_log_path);
        if (!*log_) throw DataError("cannot open loss log: " + loss_log_path);
        *log_ << "step,l_ce,l_mel,l_gan,l_total,lr\n";
    }
}

LmTrainingRun::~LmTrainingRun() = default;

int64_t LmTrainingRun::optimizer_steps() const { return lm_opt_->steps_taken(); }

LmTrainingRun::SampleLosses LmTrainingRun::sample_pass(const LmTrainSample& s,
                                                       double grad_scale) {
    SampleLosses out;
    G g(true);
    std::vector<int> input(1, kSosToken);
    input.insert(input.end(), s.tokens.begin(), s.tokens.end());
    std::vector<int> targets = s.tokens;
    targets.push_back(kEosToken);
    std::vector<uint8_t> mask(targets.size(), 1);

    auto logits = lm_.forward_graph(g, input, s.x_te, s.x_se, /*trainable=*/true);
    auto lce = g.cross_entropy_mean(logits, targets, mask);

    const int n = int(s.tokens.size());
    // soft mixture over exactly the codebook rows (1024 for the production
    // codec; reduced fixtures carry fewer entries)
    const int entries = codec_.rvq.stages[0].value.dim(0);
    auto audio_logits = g.slice_cols(g.slice_rows(logits, 0, n), 0, entries);
    auto probs = g.softmax_rows(audio_logits);
    auto soft = g.matmul(probs, g.constant(codec_.rvq.stages[0].value)); // [n, code_dim]
    auto pred_mel = codec_.decode_graph(g, g.transpose2d(soft), /*trainable=*/false);
    auto lmel = g.mae_mean(pred_mel, g.constant(s.gt_mel_t));

    G::NodeId lgan;
    Tensor<float> pred_wav_value;
    if (gan_on_) {
        // detach the mel: the adversarial term trains the vocoder only
        auto mel_det = g.constant(g.val(pred_mel));
        auto wav = vocoder_->forward_graph(g, mel_det, &s.spk_mean, /*trainable=*/true);
        auto d_fake = disc_->forward_graph(g, wav, /*trainable=*/false);
        auto adv = g.scale(g.log_(g.clamp(d_fake, 1e-7f, 1.0f)), -1.0f);
        lgan = g.add(adv, g.mae_mean(wav, g.constant(s.gt_wav)));
        pred_wav_value = g.val(wav);
    } else {
        lgan = g.constant(Tensor<float>::scalar(0.0f));
    }

    auto total = g.add(g.add(g.scale(lce, float(cfg_.alpha)), g.scale(lmel, float(cfg_.beta))),
                       g.scale(lgan, float(cfg_.gamma)));
    g.backward(g.scale(total, float(grad_scale)));

    out.ce = double(g.scalar_value(lce));
    out.mel = double(g.scalar_value(lmel));
    out.gan = double(g.scalar_value(lgan));
    if (!std::isfinite(out.ce) || !std::isfinite(out.mel) || !std::isfinite(out.gan))
        throw ModelError("LM training: non-finite loss at update " +
                         std::to_string(updates_ + 1));

    if (gan_on_) {
        G gd(true);
        auto d_real = disc_->forward_graph(gd, gd.constant(s.gt_wav), /*trainable=*/true);
        auto d_fake = disc_->forward_graph(gd, gd.constant(pred_wav_value), /*trainable=*/true);
        auto one = gd.constant(Tensor<float>::scalar(1.0f));
        auto dl = gd.add(gd.scale(gd.log_(gd.clamp(d_real, 1e-7f, 1.0f)), -1.0f),
                         gd.scale(gd.log_(gd.clamp(gd.sub(one, d_fake), 1e-7f, 1.0f)), -1.0f));
        gd.backward(gd.scale(dl, float(grad_scale)));
    }
    return out;
}

LossBreakdown LmTrainingRun::update() {
    const double grad_scale = 1.0 / double(cfg_.grad_accum * cfg_.batch);
    SampleLosses acc;
    for (int a = 0; a < cfg_.grad_accum; ++a) {
        for (int b = 0; b < cfg_.batch; ++b) {
            const LmTrainSample& s =
                dataset_[size_t(rng_.uniform_int(0, int64_t(dataset_.size()) - 1))];
            SampleLosses l = sample_pass(s, grad_scale);
            ++samples_seen_;
            acc.ce += l.ce;
            acc.mel += l.mel;
            acc.gan += l.gan;
        }
    }
    const double inv = 1.0 / double(cfg_.grad_accum * cfg_.batch);
    const int64_t step = updates_ + 1;
    last_lr_ = lr_at(std::min(step, cfg_.total_steps), cfg_);
    lm_opt_->step(float(last_lr_));
    lm_opt_->zero_grad();
    if (gan_on_) {
        voc_opt_->step(float(last_lr_));
        voc_opt_->zero_grad();
        disc_opt_->step(float(last_lr_));
        disc_opt_->zero_grad();
    }
    ++updates_;

    LossBreakdown out;
    out.step = step;
    out.l_ce = acc.ce * inv;
    out.l_mel = acc.mel * inv;
    out.l_gan = acc.gan * inv;
    out.l_total = loss_total(out.l_ce, out.l_mel, out.l_gan, cfg_);
    if (log_) {
        *log_ << out.step << "," << out.l_ce << "," << out.l_mel << "," << out.l_gan << ","
              << out.l_total << "," << last_lr_ << "\n";
        log_->flush();
    }
    if (hook_) hook_(updates_);
    return out;
}

VocoderTrainStats train_vocoder(VocoderNet<float>& voc, Discriminator<float>& disc,
                                const std::vector<VocoderPair>& pairs,
                                const VocoderTrainConfig& cfg) {
    if (pairs.empty()) throw DataError("train_vocoder: no pairs");
    AdamW<float> g_opt(voc.trainable_params(), 0.9f, 0.999f, 1e-8f, 0.0f);
    AdamW<float> d_opt(disc.trainable_params(), 0.9f, 0.999f, 1e-8f, 0.0f);
    Rng rng(cfg.seed);
    VocoderTrainStats stats;
    for (int step = 0; step < cfg.steps; ++step) {
        const VocoderPair& p = pairs[size_t(rng.uniform_int(0, int64_t(pairs.size()) - 1))];

        // generator phase
        g_opt.zero_grad();
        G g(true);
        auto wav = voc.forward_graph(g, g.constant(p.mel_t), &p.spk_mean, /*trainable=*/true);
        auto d_fake = disc.forward_graph(g, wav, /*trainable=*/false);
        auto adv = g.scale(g.log_(g.clamp(d_fake, 1e-7f, 1.0f)), -1.0f);
        auto l1 = g.mae_mean(wav, g.constant(p.wav));
        auto gl = g.add(adv, l1);
        g.backward(gl);
        double l1v = double(g.scalar_value(l1));
        if (!std::isfinite(double(g.scalar_value(gl))))
            throw ModelError("train_vocoder diverged at step " + std::to_string(step));
        Tensor<float> fake = g.val(wav);
        g_opt.step(float(cfg.lr));

        // discriminator phase
        d_opt.zero_grad();
        G gd(true);
        auto d_real = disc.forward_graph(gd, gd.constant(p.wav), /*trainable=*/true);
        auto d_fake2 = disc.forward_graph(gd, gd.constant(fake), /*trainable=*/true);
        auto one = gd.constant(Tensor<float>::scalar(1.0f));
        auto dl = gd.add(gd.scale(gd.log_(gd.clamp(d_real, 1e-7f, 1.0f)), -1.0f),
                         gd.scale(gd.log_(gd.clamp(gd.sub(one, d_fake2), 1e-7f, 1.0f)), -1.0f));
        gd.backward(dl);
        d_opt.step(float(cfg.lr));

        if (step == 0) stats.initial_l1 = l1v;
        stats.final_l1 = l1v;
    }
    return stats;
}

} // namespace engen
