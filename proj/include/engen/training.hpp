#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "engen/codec_lm.hpp"
#include "engen/losses.hpp"
#include "engen/neural_codec.hpp"
#include "engen/optimizer.hpp"
#include "engen/speaker_encoder.hpp"
#include "engen/text_frontend.hpp"
#include "engen/vocoder.hpp"

namespace engen {

struct CodecTrainConfig {
    int steps = 200;
    int batch = 2;
    double lr = 3e-4;
    double commit_weight = 0.25;
    double crop_min_s = 1.0, crop_max_s = 2.0;
    uint64_t seed = 1;
};

struct CodecTrainStats {
    double initial_recon = 0.0; // mean L1 at the first step
    double final_recon = 0.0;   // mean L1 at the last step
};

// Mel-reconstruction L1 + commitment + codebook losses with straight-through
// quantization. Freezes the codec on success.
CodecTrainStats train_codec(Codec<float>& codec, const std::vector<Waveform>& corpus,
                            const CodecTrainConfig& cfg);

// One training utterance with all frozen-module outputs precomputed.
struct LmTrainSample {
    std::vector<int> tokens;  // first-codebook audio tokens, length <= max_seq-1
    Tensor<float> x_te;       // [n_text, hidden]
    Tensor<float> x_se;       // [n_ref_frames, d_spk]
    Tensor<float> gt_mel_t;   // [n_mels, n_tokens]
    Tensor<float> gt_wav;     // [1, n_tokens*294]
    Tensor<float> spk_mean;   // [d_spk]
};

LmTrainSample make_lm_sample(const Waveform& crop, const std::string& text,
                             const Waveform& reference, const BpeModel& bpe,
                             const TextEncoder<float>& text_enc, const Codec<float>& codec,
                             const SpeakerEncoder<float>& spk_enc, int max_seq);

// Teacher-forced composite-loss training of the codec LM. l_ce and l_mel
// train the LM; l_gan trains the vocoder generator only, with the
// discriminator updated on its own objective each micro-batch. Gradients
// accumulate over grad_accum micro-batches per optimizer update, and one
// `step,l_ce,l_mel,l_gan,l_total,lr` line is appended per update.
class LmTrainingRun {
public:
    LmTrainingRun(CodecLm<float>& lm, const Codec<float>& codec, VocoderNet<float>* vocoder,
                  Discriminator<float>* disc, std::vector<LmTrainSample> dataset,
                  const TrainConfig& cfg, const std::string& loss_log_path);
    ~LmTrainingRun();

    LossBreakdown update(); // one optimizer update
    int64_t updates_done() const { return updates_; }
    int64_t optimizer_steps() const;
    int64_t samples_seen() const { return samples_seen_; }
    double last_lr() const { return last_lr_; }

    // invoked after every update; used for periodic checkpointing
    void set_update_hook(std::function<void(int64_t)> hook) { hook_ = std::move(hook); }

private:
    struct SampleLosses {
        double ce = 0.0, mel = 0.0, gan = 0.0;
    };
    SampleLosses sample_pass(const LmTrainSample& s, double grad_scale);

    CodecLm<float>& lm_;
    const Codec<float>& codec_;
    VocoderNet<float>* vocoder_;
    Discriminator<float>* disc_;
    std::vector<LmTrainSample> dataset_;
    TrainConfig cfg_;
    bool gan_on_;
    Rng rng_;
    std::unique_ptr<AdamW<float>> lm_opt_, voc_opt_, disc_opt_;
    std::unique_ptr<std::ofstream> log_;
    std::function<void(int64_t)> hook_;
    int64_t updates_ = 0;
    int64_t samples_seen_ = 0;
    double last_lr_ = 0.0;
};

struct VocoderPair {
    Tensor<float> mel_t;    // [n_mels, F]
    Tensor<float> wav;      // [1, F*294]
    Tensor<float> spk_mean; // [d_spk]
};

struct VocoderTrainConfig {
    int steps = 200;
    double lr = 2e-4;
    uint64_t seed = 2;
};

struct VocoderTrainStats {
    double initial_l1 = 0.0;
    double final_l1 = 0.0;
};

// Alternating generator/discriminator updates.
VocoderTrainStats train_vocoder(VocoderNet<float>& voc, Discriminator<float>& disc,
                                const std::vector<VocoderPair>& pairs,
                                const VocoderTrainConfig& cfg);

} // namespace engen
