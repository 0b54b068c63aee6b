// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit code 0 iff all pass.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "engen/checkpoint.hpp"
#include "engen/gradient_suite.hpp"
#include "engen/pipeline.hpp"
#include "engen/training.hpp"
#include "test_support.hpp"

using namespace engen;
using namespace engen::test;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

template <typename Fn>
void criterion(int id, const std::string& name, Fn&& fn) {
    try {
        auto [pass, detail] = fn();
        report(id, name, pass, detail);
    } catch (const std::exception& e) {
        report(id, name, false, std::string("exception: ") + e.what());
    }
}

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// Overfit artifacts shared by criteria 6, 10 and 12.
struct OverfitFixture {
    TempDir tmp;
    BpeModel bpe;
    LmConfig lm_cfg;
    TextEncoder<float> text_enc;
    SpeakerEncoder<float> spk_enc;
    Codec<float> codec;
    CodecLm<float> lm;      // trained
    CodecLm<float> lm_init; // untrained copy of the same init
    std::vector<LmTrainSample> samples;
    std::vector<std::string> texts;
    std::vector<Waveform> wavs;
    double train_seconds = 0.0;
    double final_ce = -1.0;
    int64_t updates_used = 0;
    int best_improvements = 0;
    bool built = false;

    void build() {
        double t0 = now_s();
        // the second transcript is deliberately long so the length probe
        // populates two buckets
        texts = {"suara pertama yang sangat jelas",
                 "nada kedua jauh lebih rendah dan terus berbicara dengan tempo lambat "
                 "sampai kalimat panjang ini akhirnya selesai"};
        wavs = {make_speaker_signal(115.0, 800.0, 2.0, 51),
                make_speaker_signal(175.0, 1500.0, 2.0, 52)};
        bpe = bpe_train(texts, 300);
        lm_cfg = LmConfig::custom(128, 2, 2); // S scaled per the exit criteria
        TextEncoderConfig tc;
        tc.vocab_size = bpe.vocab_size();
        tc.d_model = lm_cfg.hidden_dim;
        text_enc = TextEncoder<float>::make(tc);
        spk_enc = SpeakerEncoder<float>::make();
        codec = Codec<float>::make(7, /*code_dim=*/16, /*entries=*/kCodebookEntries, 8, 16);
        CodecTrainConfig ccfg;
        ccfg.steps = 60;
        ccfg.batch = 2;
        ccfg.crop_min_s = 1.0;
        ccfg.crop_max_s = 2.0;
        ccfg.seed = 7;
        train_codec(codec, wavs, ccfg); // freezes the codec
        for (int i = 0; i < 2; ++i)
            samples.push_back(make_lm_sample(wavs[size_t(i)], texts[size_t(i)], wavs[size_t(i)],
                                             bpe, text_enc, codec, spk_enc, 500));
        lm = CodecLm<float>::make(lm_cfg, 42);
        lm_init = lm;

        TrainConfig cfg;
        cfg.grad_accum = 1;
        cfg.batch = 2;
        cfg.train_gan = false;
        cfg.warmup_steps = 40;
        cfg.total_steps = 10000;
        cfg.peak_lr = 2e-3;
        cfg.seed = 42;
        LmTrainingRun run(lm, codec, nullptr, nullptr, samples, cfg,
                          tmp.file("overfit_loss_log.csv"));
        // train past the 0.1 bar until greedy decoding is unambiguous
        double best_ce = std::numeric_limits<double>::infinity();
        for (int u = 0; u < 500; ++u) {
            LossBreakdown b = run.update();
            final_ce = b.l_ce;
            updates_used = b.step;
            if (b.l_ce < best_ce) {
                best_ce = b.l_ce;
                ++best_improvements;
            }
            if (b.l_ce < 0.005) break;
        }
        save_bundle(tmp.file("models"), bpe, codec, lm, nullptr);
        train_seconds = now_s() - t0;
        built = true;
    }

    ModelBundle as_bundle(const CodecLm<float>& which_lm) {
        ModelBundle b;
        b.bpe = bpe;
        b.lm_cfg = lm_cfg;
        b.text_enc = text_enc;
        b.spk_enc = spk_enc;
        b.codec = codec;
        b.lm = which_lm;
        b.voc_cfg.mode = VocoderMode::kDeterministic;
        return b;
    }
};

OverfitFixture g_fix;

} // namespace

int main() {
    std::printf("engen-tts acceptance suite\n");

    criterion(1, "gradient suite (all trainable ops, rel err < 1e-4, < 2 min)", [] {
        double t0 = now_s();
        auto results = run_gradient_suite(1e-4);
        double elapsed = now_s() - t0;
        bool pass = elapsed < 120.0;
        std::string detail;
        for (const auto& r : results) {
            pass = pass && r.result.max_rel_err < 1e-4;
            detail += fmt("%s %.2e; ", r.name.c_str(), r.result.max_rel_err);
        }
        detail += fmt("%.1f s", elapsed);
        return std::pair{pass, detail};
    });

    criterion(2, "causality: 50 future perturbations leave earlier logits exact", [] {
        LmConfig cfg = LmConfig::custom(64, 4, 2);
        cfg.max_audio_tokens = 128;
        cfg.d_spk = 32;
        auto lm = CodecLm<float>::make(cfg, 11);
        Rng rng(12);
        Tensor<float> te = Tensor<float>::randn({6, 64}, rng, 0.7f);
        Tensor<float> se = Tensor<float>::randn({5, 32}, rng, 0.7f);
        std::vector<int> toks(64);
        toks[0] = kSosToken;
        for (int i = 1; i < 64; ++i) toks[size_t(i)] = int(rng.uniform_int(0, 1023));
        Tensor<float> base = lm.forward(toks, te, se);
        bool pass = true;
        for (int trial = 0; trial < 50; ++trial) {
            int t = int(rng.uniform_int(1, 63));
            std::vector<int> mod = toks;
            mod[size_t(t)] = int(rng.uniform_int(0, 1023));
            Tensor<float> out = lm.forward(mod, te, se);
            pass = pass && std::memcmp(base.row(0), out.row(0),
                                       size_t(t) * 1027 * sizeof(float)) == 0;
        }
        return std::pair{pass, std::string("bit-exact prefixes over 50 trials")};
    });

    criterion(3, "KV-cache equivalence: 64 greedy tokens, logits <= 1e-5", [] {
        LmConfig cfg = LmConfig::custom(64, 4, 2);
        cfg.max_audio_tokens = 128;
        cfg.d_spk = 32;
        auto lm = CodecLm<float>::make(cfg, 13);
        Rng rng(14);
        Tensor<float> te = Tensor<float>::randn({7, 64}, rng, 0.7f);
        Tensor<float> se = Tensor<float>::randn({6, 32}, rng, 0.7f);
        auto cache = lm.start_session(te, se);
        std::vector<int> prefix = {kSosToken};
        float max_diff = 0.0f;
        bool tokens_match = true;
        int steps = 0;
        auto pick = [](const float* row) {
            int best = -1;
            float bv = -std::numeric_limits<float>::infinity();
            for (int j = 0; j < kLmVocab; ++j) {
                if (j == kSosToken || j == kPadToken) continue;
                if (row[j] > bv) {
                    bv = row[j];
                    best = j;
                }
            }
            return best;
        };
        for (; steps < 64; ++steps) {
            std::vector<float> cached = lm.step(cache, prefix.back());
            Tensor<float> full = lm.forward(prefix, te, se);
            const float* last = full.row(full.dim(0) - 1);
            for (int j = 0; j < kLmVocab; ++j)
                max_diff = std::max(max_diff, std::abs(cached[size_t(j)] - last[j]));
            int a = pick(cached.data()), b = pick(last);
            tokens_match = tokens_match && a == b;
            if (a == kEosToken) break;
            prefix.push_back(a);
        }
        bool pass = tokens_match && max_diff <= 1e-5f && steps >= 32;
        return std::pair{pass, fmt("max abs logit diff %.2e over %d steps", max_diff, steps)};
    });

    criterion(4, "codec frame arithmetic: floor(N/294); 10 s -> 750x4 -> 750", [] {
        auto codec = Codec<float>::make(15);
        codec.frozen = true;
        Rng rng(16);
        bool pass = true;
        for (int i = 0; i < 100; ++i) {
            int n = int(rng.uniform_int(kFrameSamples, 22050));
            Waveform w = make_noise(1.05, 0.4, uint64_t(200 + i));
            w.samples.resize(size_t(n));
            pass = pass && codec.encode_audio(w).n_frames() == n / kFrameSamples;
        }
        Waveform ten = make_speaker_signal(130.0, 900.0, 10.0, 17);
        CodeMatrix m = codec.encode_audio(ten);
        pass = pass && m.n_frames() == 750 && m.codes.dim(1) == 4;
        TokenSequence seq = select_first_codebook(m);
        pass = pass && seq.tokens.size() == 750 && seq.audio_only();
        return std::pair{pass, fmt("100 random lengths + 750x4 matrix + %zu-token selection",
                                   seq.tokens.size())};
    });

    criterion(5, "RVQ: residual norms non-increasing on 1000 latents; exact match", [] {
        auto codec = Codec<float>::make(18, /*code_dim=*/6, /*entries=*/8, 4, 6);
        Rng rng(19);
        bool pass = true;
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<float> latent(6);
            for (auto& x : latent) x = float(rng.normal());
            RvqResult r = rvq_quantize(latent.data(), 6, codec.rvq);
            double prev = std::numeric_limits<double>::infinity();
            for (double n : r.residual_norms) {
                pass = pass && n <= prev + 1e-9;
                prev = n;
            }
        }
        std::vector<float> planted(6);
        for (int j = 0; j < 6; ++j) {
            planted[size_t(j)] = float(0.3 * j - 0.7);
            codec.rvq.stages[0].value.at(5, j) = planted[size_t(j)];
        }
        RvqResult r = rvq_quantize(planted.data(), 6, codec.rvq);
        pass = pass && r.ids[0] == 5 && r.residual_norms[0] < 1e-7;
        return std::pair{pass, fmt("4000 stage transitions; planted-entry residual %.1e",
                                   r.residual_norms[0])};
    });

    criterion(6, "overfit: scaled S reaches l_ce < 0.1 and reproduces both sequences", [] {
        g_fix.build();
        bool ce_ok = g_fix.final_ce < 0.1 && g_fix.updates_used <= 500;
        bool decode_ok = true;
        for (int i = 0; i < 2; ++i) {
            TokenSequence gen = g_fix.lm.generate(g_fix.samples[size_t(i)].x_te,
                                                  g_fix.samples[size_t(i)].x_se,
                                                  SamplingConfig::greedy(), 0);
            decode_ok = decode_ok && gen.tokens == g_fix.samples[size_t(i)].tokens;
        }
        bool time_ok = g_fix.train_seconds < 600.0;
        bool trend_ok = g_fix.best_improvements >= 5; // monotone-in-trend descent
        return std::pair{ce_ok && decode_ok && time_ok && trend_ok,
                         fmt("l_ce %.4f after %lld updates (%d best-so-far improvements); "
                             "decode %s; %.0f s",
                             g_fix.final_ce, (long long)g_fix.updates_used,
                             g_fix.best_improvements, decode_ok ? "exact" : "MISMATCH",
                             g_fix.train_seconds)};
    });

    criterion(7, "loss formulas: composite anchors, lr schedule, loss log columns", [] {
        TrainConfig cfg;
        bool pass = loss_total(1.0, 1.0, 1.0, cfg) == 2.5;
        pass = pass && lr_at(32000, cfg) == 5e-4;
        pass = pass && lr_at(16000, cfg) == 2.5e-4;
        pass = pass && lr_at(cfg.total_steps, cfg) == 0.0;

        // every logged step carries all five columns after `step`
        if (!g_fix.built) g_fix.build();
        std::ifstream f(g_fix.tmp.file("overfit_loss_log.csv"));
        std::string line;
        std::getline(f, line);
        pass = pass && line == "step,l_ce,l_mel,l_gan,l_total,lr";
        int64_t rows = 0;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            ++rows;
            pass = pass && std::count(line.begin(), line.end(), ',') == 5;
        }
        pass = pass && rows == g_fix.updates_used;
        return std::pair{pass, fmt("anchors exact; %lld log rows complete", (long long)rows)};
    });

    criterion(8, "RTF: exact unit anchor and self-consistent benchmark report", [] {
        bool pass = compute_rtf(1.0, 1.0) == 1.0;
        if (!g_fix.built) g_fix.build();
        ModelBundle bundle = g_fix.as_bundle(g_fix.lm);
        SynthesisReport rep = synthesize(g_fix.texts[0], g_fix.wavs[0], bundle,
                                         SamplingConfig::greedy(), 0, "");
        pass = pass && rep.rtf == compute_rtf(rep.synth_seconds, rep.audio_seconds);
        pass = pass && rep.audio_seconds == double(rep.token_count) / 75.0;
        bool threw = false;
        try {
            compute_rtf(1.0, 0.0);
        } catch (const DataError&) {
            threw = true;
        }
        return std::pair{pass && threw,
                         fmt("rtf %.3f over %.2f s audio; recomputation exact", rep.rtf,
                             rep.audio_seconds)};
    });

    criterion(9, "corpus stats: hand-computed example exact; 10-shuffle invariant", [] {
        Manifest m;
        m.records = {{"/x.wav", "s1", 3.0, "a b a"}, {"/y.wav", "s2", 5.0, "b c"}};
        CorpusStats s = corpus_stats(m);
        bool pass = s.hours == 8.0 / 3600.0 && s.mean_audio_length == 4.0 &&
                    s.total_words == 5 && s.vocab_size == 3 && s.total_recordings == 2 &&
                    std::abs(s.mean_word_freq - 5.0 / 3.0) < 1e-15;

        Rng rng(20);
        Manifest big;
        for (int i = 0; i < 15; ++i) {
            ManifestRecord r;
            r.audio_path = "/r" + std::to_string(i);
            r.speaker = "s";
            r.duration_s = 0.2 + 7.0 * rng.uniform();
            r.transcript = "kata ke " + std::to_string(i % 4) + " selesai.";
            big.records.push_back(r);
        }
        CorpusStats base = corpus_stats(big);
        for (int t = 0; t < 10; ++t) {
            for (size_t i = big.records.size() - 1; i > 0; --i)
                std::swap(big.records[i], big.records[size_t(rng.uniform_int(0, int64_t(i)))]);
            CorpusStats sh = corpus_stats(big);
            pass = pass && sh.hours == base.hours &&
                   sh.mean_audio_length == base.mean_audio_length &&
                   sh.total_words == base.total_words && sh.vocab_size == base.vocab_size &&
                   sh.sentences == base.sentences && sh.mean_word_freq == base.mean_word_freq;
        }
        return std::pair{pass, std::string("exact equality across shuffles")};
    });

    criterion(10, "end-to-end determinism: byte-identical WAV across two runs", [] {
        if (!g_fix.built) g_fix.build();
        ModelBundle b1 = load_bundle(g_fix.tmp.file("models"));
        ModelBundle b2 = load_bundle(g_fix.tmp.file("models"));
        std::string p1 = g_fix.tmp.file("det1.wav"), p2 = g_fix.tmp.file("det2.wav");
        synthesize(g_fix.texts[0], g_fix.wavs[0], b1, SamplingConfig::greedy(), 0, p1);
        synthesize(g_fix.texts[0], g_fix.wavs[0], b2, SamplingConfig::greedy(), 0, p2);
        auto slurp = [](const std::string& p) {
            std::ifstream f(p, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
        };
        std::string w1 = slurp(p1), w2 = slurp(p2);
        bool pass = !w1.empty() && w1 == w2;
        return std::pair{pass, fmt("%zu bytes, identical", w1.size())};
    });

    criterion(11, "frozenness audit: conditioning-stack digests unchanged by 100 updates", [] {
        BpeModel bpe = bpe_train({"audit satu", "audit dua"}, 280);
        LmConfig cfg = LmConfig::custom(32, 2, 1);
        TextEncoderConfig tc;
        tc.vocab_size = bpe.vocab_size();
        tc.d_model = 32;
        auto text_enc = TextEncoder<float>::make(tc);
        auto spk_enc = SpeakerEncoder<float>::make();
        auto codec = Codec<float>::make(21, 8, 16, 4, 6);
        codec.frozen = true;
        Waveform w = make_speaker_signal(120.0, 850.0, 0.6, 61);
        std::vector<LmTrainSample> samples = {
            make_lm_sample(w, "audit satu", w, bpe, text_enc, codec, spk_enc, 500)};
        auto lm = CodecLm<float>::make(cfg, 62);

        auto digest_all = [&] {
            uint64_t h = 0;
            text_enc.for_each_tensor(
                [&](const std::string&, const Tensor<float>& t) { h = digest_tensor(t, h + 1); });
            codec.for_each_param(
                [&](const Param<float>& p) { h = digest_tensor(p.value, h + 1); });
            h = digest_tensor(spk_enc.proj_w, h + 1);
            h = digest_tensor(spk_enc.proj_b, h + 1);
            return h;
        };
        uint64_t before = digest_all();

        TrainConfig tcfg;
        tcfg.grad_accum = 1;
        tcfg.batch = 1;
        tcfg.train_gan = false;
        tcfg.warmup_steps = 10;
        tcfg.total_steps = 1000;
        LmTrainingRun run(lm, codec, nullptr, nullptr, samples, tcfg, "");
        uint64_t lm_before = 0;
        lm.for_each_param([&](const Param<float>& p) { lm_before = digest_tensor(p.value, lm_before + 1); });
        for (int i = 0; i < 100; ++i) run.update();
        uint64_t after = digest_all();
        uint64_t lm_after = 0;
        lm.for_each_param([&](const Param<float>& p) { lm_after = digest_tensor(p.value, lm_after + 1); });
        bool pass = before == after && lm_before != lm_after; // LM itself did move
        return std::pair{pass, fmt("frozen digest %016llx stable; LM weights changed",
                                   (unsigned long long)after)};
    });

    criterion(12, "length probe: trained NLL beats random init in every populated bucket", [] {
        if (!g_fix.built) g_fix.build();
        std::vector<std::pair<std::string, Waveform>> items;
        for (int i = 0; i < 2; ++i) items.push_back({g_fix.texts[size_t(i)], g_fix.wavs[size_t(i)]});
        ModelBundle trained = g_fix.as_bundle(g_fix.lm);
        ModelBundle random_init = g_fix.as_bundle(g_fix.lm_init);
        auto bt = length_probe(trained, items);
        auto br = length_probe(random_init, items);
        bool pass = true;
        int populated = 0;
        std::string detail;
        for (size_t i = 0; i < bt.size(); ++i) {
            if (bt[i].count == 0) continue;
            ++populated;
            pass = pass && br[i].count == bt[i].count && bt[i].mean_nll < br[i].mean_nll;
            detail += fmt("[%d-%d] %.3f<%.3f ", bt[i].lo, bt[i].hi, bt[i].mean_nll,
                          br[i].mean_nll);
        }
        pass = pass && populated > 0;
        return std::pair{pass, detail};
    });

    std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "SUCCESS" : "FAILURE",
                g_failures);
    return g_failures == 0 ? 0 : 1;
}
