#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "engen/checkpoint.hpp"
#include "engen/pipeline.hpp"
#include "engen/training.hpp"
#include "test_support.hpp"

using namespace engen;
using namespace engen::test;

namespace {

// Tiny fully-assembled bundle with a briefly trained LM, shared across the
// synthesis tests.
struct ToyBundle {
    TempDir tmp;
    ModelBundle bundle;
    Waveform ref;

    ToyBundle() {
        BpeModel bpe = bpe_train({"halo dunia", "apa kabar"}, 280);
        LmConfig cfg = LmConfig::custom(32, 2, 1);
        cfg.max_audio_tokens = 60;
        auto codec = Codec<float>::make(3, 8, 16, 4, 6);
        codec.frozen = true;
        TextEncoderConfig tc;
        tc.vocab_size = bpe.vocab_size();
        tc.d_model = 32;
        auto text_enc = TextEncoder<float>::make(tc);
        auto spk_enc = SpeakerEncoder<float>::make();
        ref = make_speaker_signal(120.0, 900.0, 0.8, 4);

        std::vector<LmTrainSample> samples = {
            make_lm_sample(ref, "halo dunia", ref, bpe, text_enc, codec, spk_enc, 500)};
        auto lm = CodecLm<float>::make(cfg, 5);
        TrainConfig tcfg;
        tcfg.grad_accum = 1;
        tcfg.batch = 1;
        tcfg.train_gan = false;
        tcfg.warmup_steps = 5;
        tcfg.total_steps = 2000;
        tcfg.peak_lr = 2e-3;
        LmTrainingRun run(lm, codec, nullptr, nullptr, samples, tcfg, "");
        for (int i = 0; i < 60; ++i) run.update();

        save_bundle(tmp.file("models"), bpe, codec, lm, nullptr);
        bundle = load_bundle(tmp.file("models"));
    }
};

} // namespace

TEST_CASE("manifest: parse, validation, errors") {
    TempDir tmp;
    {
        std::ofstream f(tmp.file("m.tsv"));
        f << "# comment line\n";
        f << "/a/b.wav\tspk1\t3.5\thalo dunia selamat pagi\n";
        f << "/a/c.wav\tspk2\t2\ttext with\ttab inside\n";
    }
    Manifest m = load_manifest(tmp.file("m.tsv"));
    REQUIRE(m.records.size() == 2);
    CHECK(m.records[0].audio_path == "/a/b.wav");
    CHECK(m.records[0].speaker == "spk1");
    CHECK(m.records[0].duration_s == 3.5);
    CHECK(m.records[0].transcript == "halo dunia selamat pagi");
    CHECK(m.records[1].transcript == "text with\ttab inside");

    {
        std::ofstream f(tmp.file("bad.tsv"));
        f << "only\ttwo\tcolumns\n";
    }
    CHECK_THROWS_AS(load_manifest(tmp.file("bad.tsv")), DataError);
    {
        std::ofstream f(tmp.file("neg.tsv"));
        f << "/a.wav\ts\t-1\ttext\n";
    }
    CHECK_THROWS_AS(load_manifest(tmp.file("neg.tsv")), DataError);
    CHECK_THROWS_AS(load_manifest(tmp.file("missing.tsv")), DataError);
    {
        std::ofstream f(tmp.file("noaudio.tsv"));
        f << "/nonexistent/file.wav\ts\t1\ttext\n";
    }
    CHECK_THROWS_AS(load_manifest(tmp.file("noaudio.tsv"), true), DataError);
}

TEST_CASE("corpus_stats: hand-computed two-record example") {
    Manifest m;
    m.records = {{"/x.wav", "s1", 3.0, "a b a"}, {"/y.wav", "s2", 5.0, "b c"}};
    CorpusStats s = corpus_stats(m);
    CHECK(s.hours == 8.0 / 3600.0);
    CHECK(s.mean_audio_length == 4.0);
    CHECK(s.total_words == 5);
    CHECK(s.vocab_size == 3);
    CHECK(s.mean_word_freq == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
    CHECK(s.total_recordings == 2);
}

TEST_CASE("corpus_stats: normalization, sentences, single record") {
    Manifest m;
    m.records = {{"/x.wav", "s", 2.5, "Halo, HALO! Dunia."}};
    CorpusStats s = corpus_stats(m);
    CHECK(s.total_words == 3);
    CHECK(s.vocab_size == 2); // halo, dunia
    CHECK(s.sentences == 2);
    CHECK(s.mean_audio_length == 2.5);

    Manifest empty;
    CHECK_THROWS_AS(corpus_stats(empty), DataError);
}

TEST_CASE("corpus_stats: exactly permutation-invariant") {
    Rng rng(77);
    Manifest m;
    for (int i = 0; i < 12; ++i) {
        ManifestRecord r;
        r.audio_path = "/p" + std::to_string(i) + ".wav";
        r.speaker = "s";
        r.duration_s = 0.37 + rng.uniform() * 5.13;
        r.transcript = "kata nomor " + std::to_string(i % 5) + " lagi.";
        m.records.push_back(r);
    }
    CorpusStats base = corpus_stats(m);
    Rng shuffle_rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        for (size_t i = m.records.size() - 1; i > 0; --i)
            std::swap(m.records[i],
                      m.records[size_t(shuffle_rng.uniform_int(0, int64_t(i)))]);
        CorpusStats s = corpus_stats(m);
        CHECK(s.hours == base.hours);
        CHECK(s.mean_audio_length == base.mean_audio_length);
        CHECK(s.total_words == base.total_words);
        CHECK(s.vocab_size == base.vocab_size);
        CHECK(s.sentences == base.sentences);
        CHECK(s.mean_word_freq == base.mean_word_freq);
    }
}

TEST_CASE("corpus_stats: full-scale shape (55 h over 52k recordings)") {
    Manifest m;
    m.records.reserve(52000);
    const double dur = 55.0 * 3600.0 / 52000.0;
    for (int i = 0; i < 52000; ++i)
        m.records.push_back({"/r" + std::to_string(i) + ".wav", "s", dur, "kata"});
    CorpusStats s = corpus_stats(m);
    CHECK(s.hours == doctest::Approx(55.0).epsilon(1e-9));
    // 55 h over 52k recordings gives a 3.81 s mean by the literal formulas
    CHECK(s.mean_audio_length == doctest::Approx(3.8077).epsilon(1e-3));
    CHECK(s.total_recordings == 52000);
}

TEST_CASE("compute_rtf: anchors and guard") {
    CHECK(compute_rtf(1.0, 1.0) == 1.0);
    CHECK(compute_rtf(0.5, 10.0) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK_THROWS_AS(compute_rtf(1.0, 0.0), DataError);
    CHECK_THROWS_AS(compute_rtf(-1.0, 1.0), DataError);
}

TEST_CASE("synthesize: report consistency and determinism") {
    ToyBundle toy;
    SynthesisReport r1 = synthesize("halo dunia", toy.ref, toy.bundle,
                                    SamplingConfig::greedy(), 0, toy.tmp.file("out1.wav"));
    CHECK(r1.token_count > 0);
    CHECK(r1.audio_seconds == double(r1.token_count) / 75.0);
    CHECK(r1.rtf == compute_rtf(r1.synth_seconds, r1.audio_seconds));

    SynthesisReport r2 = synthesize("halo dunia", toy.ref, toy.bundle,
                                    SamplingConfig::greedy(), 0, toy.tmp.file("out2.wav"));
    CHECK(r1.token_count == r2.token_count);

    // byte-identical output wavs
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
    };
    std::string w1 = slurp(toy.tmp.file("out1.wav"));
    std::string w2 = slurp(toy.tmp.file("out2.wav"));
    CHECK(!w1.empty());
    CHECK(w1 == w2);

    CHECK_THROWS_AS(synthesize("", toy.ref, toy.bundle, SamplingConfig::greedy(), 0, ""),
                    UsageError);
}

TEST_CASE("save/load bundle round trip preserves generation") {
    ToyBundle toy;
    Tensor<float> x_te =
        toy.bundle.text_enc.encode(bpe_encode(toy.bundle.bpe, "halo dunia"));
    Tensor<float> x_se = toy.bundle.spk_enc.latents(toy.ref);
    TokenSequence a = toy.bundle.lm.generate(x_te, x_se, SamplingConfig::greedy(), 0);

    ModelBundle reloaded = load_bundle(toy.tmp.file("models"));
    TokenSequence b = reloaded.lm.generate(x_te, x_se, SamplingConfig::greedy(), 0);
    CHECK(a.tokens == b.tokens);
    CHECK(reloaded.codec.frozen);
    CHECK(reloaded.voc_cfg.mode == VocoderMode::kDeterministic); // no vocoder.bin saved

    CHECK_THROWS_AS(load_bundle(toy.tmp.file("nonexistent")), ModelError);
}

TEST_CASE("length_probe: bucketing is a partition; NLL non-negative") {
    ToyBundle toy;
    std::vector<std::pair<std::string, Waveform>> items;
    items.push_back({"halo", make_speaker_signal(120.0, 900.0, 0.6, 10)}); // short text
    items.push_back({"halo dunia apa kabar semua orang di sini", // longer text
                     make_speaker_signal(140.0, 1000.0, 0.6, 11)});
    items.push_back({std::string(60, 'a'), make_speaker_signal(160.0, 1100.0, 0.6, 12)});
    auto buckets = length_probe(toy.bundle, items);
    REQUIRE(buckets.size() == 5);
    int64_t total = 0;
    for (const auto& b : buckets) {
        total += b.count;
        if (b.count > 0) CHECK(b.mean_nll >= 0.0);
    }
    CHECK(total == int64_t(items.size()));
    CHECK(buckets[0].lo == 1);
    CHECK(buckets[0].hi == 25);
    CHECK(buckets[4].lo == 101);
}

TEST_CASE("CLI exit codes: 0 success, 1 usage, 2 data, 3 model") {
    if (!std::filesystem::exists("./engen")) {
        MESSAGE("engen binary not found next to test binary; skipping CLI exit-code checks");
        return;
    }
    TempDir tmp;
    auto run_cli = [](const std::string& cmd) {
        int status = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run_cli("./engen --help") == 0);
    CHECK(run_cli("./engen definitely-not-a-subcommand") == 1);
    CHECK(run_cli("./engen corpus-stats") == 1); // missing required option
    CHECK(run_cli("./engen corpus-stats --manifest /nonexistent.tsv") == 2);
    CHECK(run_cli("./engen synthesize --models /nonexistent --text x --ref /no.wav --out " +
                  tmp.file("o.wav")) == 3);

    {
        std::ofstream f(tmp.file("m.tsv"));
        f << "/x.wav\ts1\t3.0\ta b a\n/y.wav\ts2\t5.0\tb c\n";
    }
    CHECK(run_cli("./engen corpus-stats --manifest " + tmp.file("m.tsv")) == 0);
}
