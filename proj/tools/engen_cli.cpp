// engen-tts command line: training, synthesis, benchmarking and corpus tools.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "engen/audio_io.hpp"
#include "engen/checkpoint.hpp"
#include "engen/codec_lm.hpp"
#include "engen/gradient_suite.hpp"
#include "engen/losses.hpp"
#include "engen/neural_codec.hpp"
#include "engen/pipeline.hpp"
#include "engen/text_frontend.hpp"
#include "engen/training.hpp"
#include "engen/vocoder.hpp"

namespace fs = std::filesystem;
using namespace engen;

namespace {

void apply_config_file(TrainConfig& cfg, const std::string& path) {
    if (path.empty()) return;
    auto kv = load_kv(path);
    auto getd = [&](const char* k, double& v) {
        if (auto it = kv.find(k); it != kv.end()) v = std::stod(it->second);
    };
    auto geti = [&](const char* k, int64_t& v) {
        if (auto it = kv.find(k); it != kv.end()) v = std::stoll(it->second);
    };
    getd("alpha", cfg.alpha);
    getd("beta", cfg.beta);
    getd("gamma", cfg.gamma);
    getd("peak_lr", cfg.peak_lr);
    getd("weight_decay", cfg.weight_decay);
    geti("warmup_steps", cfg.warmup_steps);
    geti("total_steps", cfg.total_steps);
    if (auto it = kv.find("grad_accum"); it != kv.end()) cfg.grad_accum = std::stoi(it->second);
    if (auto it = kv.find("batch"); it != kv.end()) cfg.batch = std::stoi(it->second);
    if (auto it = kv.find("max_seq"); it != kv.end()) cfg.max_seq = std::stoi(it->second);
    if (auto it = kv.find("train_gan"); it != kv.end()) cfg.train_gan = it->second != "0";
    if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = std::stoull(it->second);
}

std::vector<Waveform> load_manifest_audio(const Manifest& m) {
    std::vector<Waveform> wavs;
    wavs.reserve(m.records.size());
    for (const auto& rec : m.records) wavs.push_back(load_wav(rec.audio_path));
    return wavs;
}

SamplingConfig make_sampling(const std::string& kind, int k, double temperature) {
    if (kind == "greedy") return SamplingConfig::greedy();
    if (kind == "topk") return SamplingConfig::top_k(k, temperature);
    throw UsageError("unknown sampling strategy: " + kind + " (want greedy or topk)");
}

void print_report(const SynthesisReport& rep) {
    std::printf("text            : %s\n", rep.text.c_str());
    std::printf("tokens          : %lld\n", static_cast<long long>(rep.token_count));
    std::printf("audio_seconds   : %.4f\n", rep.audio_seconds);
    std::printf("synth_seconds   : %.4f\n", rep.synth_seconds);
    std::printf("rtf             : %.4f\n", rep.rtf);
    if (!rep.output_path.empty()) std::printf("output          : %s\n", rep.output_path.c_str());
}

int run(int argc, char** argv) {
    CLI::App app{"engen-tts: desk-scale neural codec text-to-speech"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags (--seed etc.) may follow the subcommand

    std::string config_path;
    uint64_t seed = 0;
    bool deterministic = false;
    app.add_option("--config", config_path, "key=value training config file");
    app.add_option("--seed", seed, "global RNG seed");
    app.add_flag("--deterministic", deterministic,
                 "single-threaded bit-reproducible execution (always on; accepted for "
                 "interface stability)");

    // train-codec
    auto* tc = app.add_subcommand("train-codec", "train the RVQ audio codec");
    std::string tc_manifest, tc_out;
    CodecTrainConfig tc_cfg;
    tc->add_option("--manifest", tc_manifest, "training manifest (tsv)")->required();
    tc->add_option("--out", tc_out, "output checkpoint path")->required();
    tc->add_option("--steps", tc_cfg.steps, "optimizer steps");
    tc->add_option("--batch", tc_cfg.batch, "clips per step");
    tc->add_option("--lr", tc_cfg.lr, "learning rate");

    // train-lm
    auto* tl = app.add_subcommand("train-lm", "train the codec language model");
    std::string tl_manifest, tl_codec, tl_outdir, tl_preset = "S";
    int tl_hidden = 0, tl_heads = 0, tl_blocks = 0, tl_updates = 100, tl_bpe_vocab = 512;
    int tl_ckpt_every = 0;
    bool tl_no_gan = false;
    TrainConfig tl_cfg;
    tl->add_option("--manifest", tl_manifest, "training manifest (tsv)")->required();
    tl->add_option("--codec", tl_codec, "frozen codec checkpoint")->required();
    tl->add_option("--out-dir", tl_outdir, "output model directory")->required();
    tl->add_option("--preset", tl_preset, "model size preset S|M|L");
    tl->add_option("--hidden", tl_hidden, "override hidden dim");
    tl->add_option("--heads", tl_heads, "override attention heads");
    tl->add_option("--blocks", tl_blocks, "override block count");
    tl->add_option("--updates", tl_updates, "optimizer updates to run");
    tl->add_option("--bpe-vocab", tl_bpe_vocab, "BPE vocab size trained on transcripts");
    tl->add_option("--warmup-steps", tl_cfg.warmup_steps, "lr warmup updates");
    tl->add_option("--total-steps", tl_cfg.total_steps, "lr schedule horizon");
    tl->add_option("--peak-lr", tl_cfg.peak_lr, "peak learning rate");
    tl->add_option("--grad-accum", tl_cfg.grad_accum, "micro-batches per update");
    tl->add_option("--batch", tl_cfg.batch, "samples per micro-batch");
    tl->add_option("--max-seq", tl_cfg.max_seq, "max audio token sequence length");
    tl->add_option("--checkpoint-every", tl_ckpt_every, "save bundle every K updates");
    tl->add_flag("--no-gan", tl_no_gan, "skip vocoder/discriminator training (l_gan logged as 0)");

    // train-vocoder
    auto* tv = app.add_subcommand("train-vocoder", "train the neural vocoder (GAN)");
    std::string tv_manifest, tv_out;
    VocoderTrainConfig tv_cfg;
    tv->add_option("--manifest", tv_manifest, "training manifest (tsv)")->required();
    tv->add_option("--out", tv_out, "output checkpoint path")->required();
    tv->add_option("--steps", tv_cfg.steps, "alternating G/D updates");
    tv->add_option("--lr", tv_cfg.lr, "learning rate");

    // synthesize
    auto* sy = app.add_subcommand("synthesize", "text + reference audio -> wav");
    std::string sy_models, sy_text, sy_ref, sy_out, sy_sampling = "greedy";
    int sy_k = 50;
    double sy_temp = 0.9;
    sy->add_option("--models", sy_models, "model bundle directory")->required();
    sy->add_option("--text", sy_text, "input text")->required();
    sy->add_option("--ref", sy_ref, "reference speaker wav")->required();
    sy->add_option("--out", sy_out, "output wav path")->required();
    sy->add_option("--sampling", sy_sampling, "greedy|topk");
    sy->add_option("--k", sy_k, "top-k cutoff");
    sy->add_option("--temperature", sy_temp, "top-k temperature");

    // encode
    auto* en = app.add_subcommand("encode", "waveform -> first-codebook token file");
    std::string en_codec, en_wav, en_out;
    en->add_option("--codec", en_codec, "codec checkpoint")->required();
    en->add_option("--wav", en_wav, "input wav")->required();
    en->add_option("--out", en_out, "output token file (one id per line)")->required();

    // decode
    auto* de = app.add_subcommand("decode", "token file -> waveform");
    std::string de_codec, de_tokens, de_out, de_vocoder, de_ref;
    de->add_option("--codec", de_codec, "codec checkpoint")->required();
    de->add_option("--tokens", de_tokens, "token file (one id per line)")->required();
    de->add_option("--out", de_out, "output wav")->required();
    de->add_option("--vocoder", de_vocoder, "neural vocoder checkpoint (optional)");
    de->add_option("--ref", de_ref, "speaker reference wav (required with --vocoder)");

    // corpus-stats
    auto* cs = app.add_subcommand("corpus-stats", "descriptive statistics of a manifest");
    std::string cs_manifest, cs_csv;
    cs->add_option("--manifest", cs_manifest, "manifest (tsv)")->required();
    cs->add_option("--csv", cs_csv, "also write comma-separated output");

    // bench-rtf
    auto* br = app.add_subcommand("bench-rtf", "real-time-factor benchmark");
    std::string br_models, br_text, br_ref, br_sampling = "greedy";
    int br_runs = 3, br_k = 50;
    double br_temp = 0.9;
    br->add_option("--models", br_models, "model bundle directory")->required();
    br->add_option("--text", br_text, "input text")->required();
    br->add_option("--ref", br_ref, "reference speaker wav")->required();
    br->add_option("--runs", br_runs, "number of timed runs");
    br->add_option("--sampling", br_sampling, "greedy|topk");
    br->add_option("--k", br_k, "top-k cutoff");
    br->add_option("--temperature", br_temp, "top-k temperature");

    // length-probe
    auto* lp = app.add_subcommand("length-probe", "teacher-forced NLL by text length bucket");
    std::string lp_models, lp_manifest, lp_csv;
    lp->add_option("--models", lp_models, "model bundle directory")->required();
    lp->add_option("--manifest", lp_manifest, "manifest with ground-truth audio")->required();
    lp->add_option("--csv", lp_csv, "also write comma-separated output");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
    double gc_eps = 1e-4, gc_threshold = 1e-4;
    gc->add_option("--eps", gc_eps, "central difference step");
    gc->add_option("--threshold", gc_threshold, "max relative error allowed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1; // usage error
    }
    (void)deterministic; // execution is always deterministic and single-threaded

    if (tc->parsed()) {
        Manifest m = load_manifest(tc_manifest, /*require_audio=*/true);
        std::vector<Waveform> wavs = load_manifest_audio(m);
        tc_cfg.seed = seed != 0 ? seed : tc_cfg.seed;
        auto codec = Codec<float>::make(tc_cfg.seed);
        CodecTrainStats stats = train_codec(codec, wavs, tc_cfg);
        save_model(tc_out, codec);
        std::printf("codec trained: recon L1 %.4f -> %.4f over %d steps, saved to %s\n",
                    stats.initial_recon, stats.final_recon, tc_cfg.steps, tc_out.c_str());
        return 0;
    }

    if (tl->parsed()) {
        apply_config_file(tl_cfg, config_path);
        if (seed != 0) tl_cfg.seed = seed;
        if (tl_no_gan) tl_cfg.train_gan = false;
        Manifest m = load_manifest(tl_manifest, /*require_audio=*/true);

        LmConfig lm_cfg = LmConfig::preset(tl_preset.empty() ? 'S' : tl_preset[0]);
        if (tl_hidden > 0 && tl_heads > 0 && tl_blocks > 0)
            lm_cfg = LmConfig::custom(tl_hidden, tl_heads, tl_blocks);
        lm_cfg.validate();

        std::vector<std::string> transcripts;
        for (const auto& rec : m.records) transcripts.push_back(rec.transcript);
        BpeModel bpe = bpe_train(transcripts, tl_bpe_vocab);

        TextEncoderConfig tec;
        tec.vocab_size = bpe.vocab_size();
        tec.d_model = lm_cfg.hidden_dim;
        auto text_enc = TextEncoder<float>::make(tec);
        auto spk_enc = SpeakerEncoder<float>::make();
        Codec<float> codec = load_codec(tl_codec);

        Rng crop_rng(tl_cfg.seed + 1);
        std::vector<LmTrainSample> samples;
        for (size_t i = 0; i < m.records.size(); ++i) {
            Waveform w = load_wav(m.records[i].audio_path);
            Waveform crop = random_crop(w, 2.0, 6.0, crop_rng);
            samples.push_back(make_lm_sample(crop, m.records[i].transcript, w, bpe, text_enc,
                                             codec, spk_enc, tl_cfg.max_seq));
        }

        auto lm = CodecLm<float>::make(lm_cfg, tl_cfg.seed);
        std::unique_ptr<VocoderNet<float>> voc;
        std::unique_ptr<Discriminator<float>> disc;
        if (tl_cfg.train_gan) {
            voc = std::make_unique<VocoderNet<float>>(VocoderNet<float>::make(tl_cfg.seed + 2));
            disc = std::make_unique<Discriminator<float>>(
                Discriminator<float>::make(tl_cfg.seed + 3));
        }
        fs::create_directories(tl_outdir);
        LmTrainingRun run(lm, codec, voc.get(), disc.get(), std::move(samples), tl_cfg,
                          tl_outdir + "/loss_log.csv");
        if (tl_ckpt_every > 0) {
            run.set_update_hook([&](int64_t u) {
                if (u % tl_ckpt_every == 0)
                    save_bundle(tl_outdir, bpe, codec, lm, voc.get());
            });
        }
        LossBreakdown last{};
        for (int u = 0; u < tl_updates; ++u) {
            last = run.update();
            if (u == 0 || (u + 1) % 10 == 0 || u + 1 == tl_updates)
                std::printf("update %lld: l_ce %.4f l_mel %.4f l_gan %.4f l_total %.4f lr %.2e\n",
                            static_cast<long long>(last.step), last.l_ce, last.l_mel, last.l_gan,
                            last.l_total, run.last_lr());
        }
        save_bundle(tl_outdir, bpe, codec, lm, voc.get());
        std::printf("saved bundle to %s (loss log: %s/loss_log.csv)\n", tl_outdir.c_str(),
                    tl_outdir.c_str());
        return 0;
    }

    if (tv->parsed()) {
        Manifest m = load_manifest(tv_manifest, /*require_audio=*/true);
        auto spk_enc = SpeakerEncoder<float>::make();
        Rng rng(seed + 11);
        std::vector<VocoderPair> pairs;
        for (const auto& rec : m.records) {
            Waveform w = load_wav(rec.audio_path);
            Waveform crop = random_crop(w, 1.0, 2.0, rng);
            int f = int(crop.samples.size()) / kFrameSamples;
            if (f < 1) continue;
            MelSpectrogram mel = mel_spectrogram(crop);
            VocoderPair p;
            p.mel_t = Tensor<float>({kNumMels, f});
            for (int t = 0; t < f; ++t)
                for (int b = 0; b < kNumMels; ++b) p.mel_t.at(b, t) = mel.frames.at(t, b);
            p.wav = Tensor<float>({1, f * kFrameSamples});
            std::copy_n(crop.samples.data(), size_t(f) * kFrameSamples, p.wav.data.data());
            p.spk_mean = mean_pool_rows(spk_enc.latents(w));
            pairs.push_back(std::move(p));
        }
        if (seed != 0) tv_cfg.seed = seed;
        auto voc = VocoderNet<float>::make(tv_cfg.seed);
        auto disc = Discriminator<float>::make(tv_cfg.seed + 1);
        VocoderTrainStats stats = train_vocoder(voc, disc, pairs, tv_cfg);
        save_model(tv_out, voc);
        std::printf("vocoder trained: waveform L1 %.4f -> %.4f over %d steps, saved to %s\n",
                    stats.initial_l1, stats.final_l1, tv_cfg.steps, tv_out.c_str());
        return 0;
    }

    if (sy->parsed()) {
        ModelBundle bundle = load_bundle(sy_models);
        Waveform ref = load_wav(sy_ref);
        SynthesisReport rep = synthesize(sy_text, ref, bundle,
                                         make_sampling(sy_sampling, sy_k, sy_temp), seed, sy_out);
        print_report(rep);
        return 0;
    }

    if (en->parsed()) {
        Codec<float> codec = load_codec(en_codec);
        Waveform w = load_wav(en_wav);
        TokenSequence seq = select_first_codebook(codec.encode_audio(w));
        std::ofstream f(en_out);
        if (!f) throw DataError("cannot write token file: " + en_out);
        for (int t : seq.tokens) f << t << "\n";
        std::printf("encoded %zu tokens (%.2f s at %d Hz) to %s\n", seq.tokens.size(),
                    double(seq.tokens.size()) / kFrameRateHz, kFrameRateHz, en_out.c_str());
        return 0;
    }

    if (de->parsed()) {
        Codec<float> codec = load_codec(de_codec);
        std::ifstream f(de_tokens);
        if (!f) throw DataError("cannot open token file: " + de_tokens);
        TokenSequence seq;
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            seq.tokens.push_back(std::stoi(line));
        }
        MelSpectrogram mel = codec.decode_tokens(seq);
        VocoderConfig vc;
        std::unique_ptr<VocoderNet<float>> voc;
        Tensor<float> x_se({1, kSpkDim});
        if (!de_vocoder.empty()) {
            if (de_ref.empty()) throw UsageError("decode: --vocoder requires --ref");
            voc = std::make_unique<VocoderNet<float>>(VocoderNet<float>::make(0));
            load_model(de_vocoder, *voc);
            vc.mode = VocoderMode::kNeural;
            x_se = SpeakerEncoder<float>::make().latents(load_wav(de_ref));
        } else {
            vc.mode = VocoderMode::kDeterministic;
        }
        Waveform w = vocode(mel, x_se, voc.get(), vc);
        save_wav(de_out, w);
        std::printf("decoded %zu tokens to %s (%.2f s)\n", seq.tokens.size(), de_out.c_str(),
                    w.duration_s());
        return 0;
    }

    if (cs->parsed()) {
        Manifest m = load_manifest(cs_manifest);
        CorpusStats s = corpus_stats(m);
        std::printf("%-22s %s\n", "metric", "value");
        std::printf("%-22s %.6f\n", "hours", s.hours);
        std::printf("%-22s %.6f\n", "mean_audio_length_s", s.mean_audio_length);
        std::printf("%-22s %lld\n", "total_words", static_cast<long long>(s.total_words));
        std::printf("%-22s %lld\n", "vocab_size", static_cast<long long>(s.vocab_size));
        std::printf("%-22s %lld\n", "sentences", static_cast<long long>(s.sentences));
        std::printf("%-22s %.6f\n", "mean_word_freq", s.mean_word_freq);
        std::printf("%-22s %lld\n", "total_recordings", static_cast<long long>(s.total_recordings));
        if (!cs_csv.empty()) {
            std::ofstream f(cs_csv);
            if (!f) throw DataError("cannot write csv: " + cs_csv);
            f << "hours,mean_audio_length,total_words,vocab_size,sentences,mean_word_freq,"
                 "total_recordings\n";
            f << s.hours << "," << s.mean_audio_length << "," << s.total_words << ","
              << s.vocab_size << "," << s.sentences << "," << s.mean_word_freq << ","
              << s.total_recordings << "\n";
        }
        return 0;
    }

    if (br->parsed()) {
        ModelBundle bundle = load_bundle(br_models);
        Waveform ref = load_wav(br_ref);
        SamplingConfig sampling = make_sampling(br_sampling, br_k, br_temp);
        double sum = 0.0;
        for (int r = 0; r < br_runs; ++r) {
            SynthesisReport rep = synthesize(br_text, ref, bundle, sampling, seed + uint64_t(r),
                                             /*out_path=*/"");
            double recomputed = compute_rtf(rep.synth_seconds, rep.audio_seconds);
            std::printf("run %d: tokens %lld audio %.3fs synth %.3fs rtf %.4f%s\n", r + 1,
                        static_cast<long long>(rep.token_count), rep.audio_seconds,
                        rep.synth_seconds, rep.rtf,
                        recomputed == rep.rtf ? "" : " (inconsistent!)");
            sum += rep.rtf;
        }
        std::printf("mean rtf over %d runs: %.4f\n", br_runs, sum / br_runs);
        return 0;
    }

    if (lp->parsed()) {
        ModelBundle bundle = load_bundle(lp_models);
        Manifest m = load_manifest(lp_manifest, /*require_audio=*/true);
        std::vector<std::pair<std::string, Waveform>> items;
        for (const auto& rec : m.records) items.push_back({rec.transcript, load_wav(rec.audio_path)});
        auto buckets = length_probe(bundle, items);
        std::printf("%-12s %-8s %s\n", "text_tokens", "count", "mean_nll");
        for (const auto& b : buckets) {
            std::string range = b.hi == std::numeric_limits<int>::max()
                                    ? std::to_string(b.lo) + "+"
                                    : std::to_string(b.lo) + "-" + std::to_string(b.hi);
            if (b.count == 0)
                std::printf("%-12s %-8s (empty bucket, skipped)\n", range.c_str(), "0");
            else
                std::printf("%-12s %-8lld %.4f\n", range.c_str(),
                            static_cast<long long>(b.count), b.mean_nll);
        }
        if (!lp_csv.empty()) {
            std::ofstream f(lp_csv);
            if (!f) throw DataError("cannot write csv: " + lp_csv);
            f << "bucket_lo,bucket_hi,count,mean_nll\n";
            for (const auto& b : buckets)
                f << b.lo << "," << b.hi << "," << b.count << "," << b.mean_nll << "\n";
        }
        return 0;
    }

    if (gc->parsed()) {
        auto results = run_gradient_suite(gc_eps);
        bool ok = true;
        for (const auto& r : results) {
            bool pass = r.result.max_rel_err < gc_threshold;
            ok = ok && pass;
            std::printf("%-24s max_rel_err %.3e over %zu coords  [%s]\n", r.name.c_str(),
                        r.result.max_rel_err, r.result.coords_checked, pass ? "PASS" : "FAIL");
        }
        if (!ok) throw ModelError("gradient check failed");
        return 0;
    }

    throw UsageError("no subcommand given");
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const ModelError& e) {
        std::fprintf(stderr, "model error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
