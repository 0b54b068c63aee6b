#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <set>

#include "engen/checkpoint.hpp"
#include "engen/neural_codec.hpp"
#include "engen/training.hpp"
#include "test_support.hpp"

using namespace engen;
using namespace engen::test;

TEST_CASE("rvq_quantize: exact match on stage 0") {
    auto codec = Codec<float>::make(1, /*code_dim=*/8, /*entries=*/32, 4, 6);
    // plant a known vector at entry 17 of stage 0
    std::vector<float> v = {0.3f, -1.2f, 0.5f, 2.0f, -0.1f, 0.9f, 0.0f, -0.4f};
    for (int j = 0; j < 8; ++j) codec.rvq.stages[0].value.at(17, j) = v[size_t(j)];
    RvqResult r = rvq_quantize(v.data(), 8, codec.rvq);
    CHECK(r.ids[0] == 17);
    CHECK(r.residual_norms[0] == doctest::Approx(0.0).epsilon(1e-9));
    // zero residual quantizes to the pinned zero entry at later stages
    CHECK(r.ids[1] == 0);
    CHECK(r.ids[2] == 0);
    CHECK(r.ids[3] == 0);
}

TEST_CASE("rvq_quantize: constructed 2-D nearest neighbour") {
    auto codec = Codec<float>::make(2, /*code_dim=*/2, /*entries=*/2, 4, 6);
    codec.rvq.stages[0].value.at(1, 0) = 3.0f;
    codec.rvq.stages[0].value.at(1, 1) = 4.0f;
    float latent[2] = {3.0f, 4.0f};
    RvqResult r = rvq_quantize(latent, 2, codec.rvq);
    CHECK(r.ids[0] == 1);
    CHECK(r.residual_norms[0] == doctest::Approx(0.0));
}

TEST_CASE("rvq_quantize: residual norms non-increasing with pinned zero entries") {
    // 8-entry random codebooks, entry 0 pinned to zero by construction
    auto codec = Codec<float>::make(3, /*code_dim=*/6, /*entries=*/8, 4, 6);
    Rng rng(77);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<float> latent(6);
        for (auto& x : latent) x = float(rng.normal());
        RvqResult r = rvq_quantize(latent.data(), 6, codec.rvq);
        double prev = std::numeric_limits<double>::infinity();
        for (int s = 0; s < kRvqStages; ++s) {
            CHECK(r.residual_norms[size_t(s)] <= prev + 1e-9);
            prev = r.residual_norms[size_t(s)];
            ++checked;
        }
    }
    CHECK(checked == 4000);
}

TEST_CASE("rvq_quantize: tie breaks toward the smallest index") {
    auto codec = Codec<float>::make(4, /*code_dim=*/2, /*entries=*/4, 4, 6);
    // entries 2 and 3 equidistant from the latent
    codec.rvq.stages[0].value.at(2, 0) = 1.0f;
    codec.rvq.stages[0].value.at(2, 1) = 0.0f;
    codec.rvq.stages[0].value.at(3, 0) = -1.0f;
    codec.rvq.stages[0].value.at(3, 1) = 0.0f;
    codec.rvq.stages[0].value.at(1, 0) = 9.0f;
    codec.rvq.stages[0].value.at(1, 1) = 9.0f;
    float latent[2] = {0.0f, 2.0f};
    // distances: e0 (0,0) -> 2, e1 -> far, e2 (1,0) -> sqrt(5), e3 (-1,0) -> sqrt(5)
    RvqResult r = rvq_quantize(latent, 2, codec.rvq);
    CHECK(r.ids[0] == 0);
}

TEST_CASE("encode_audio: frame arithmetic") {
    auto codec = Codec<float>::make(5, 8, 16, 4, 6);
    Rng rng(13);
    for (int i = 0; i < 100; ++i) {
        int n = int(rng.uniform_int(kFrameSamples, 30000));
        Waveform w = make_noise(double(n) / kSampleRate + 0.01, 0.3, uint64_t(i));
        w.samples.resize(size_t(n));
        CodeMatrix m = codec.encode_audio(w);
        CHECK(m.n_frames() == n / kFrameSamples);
        CHECK(m.codes.dim(1) == 4);
    }
    Waveform short_w;
    short_w.sample_rate = kSampleRate;
    short_w.samples.assign(200, 0.1f);
    CHECK_THROWS_AS(codec.encode_audio(short_w), DataError);
}

TEST_CASE("encode_audio: 10 s gives 750x4, 1 s gives 75x4 (production codec)") {
    auto codec = Codec<float>::make(6);
    Waveform w10 = make_sine(220.0, 10.0);
    CodeMatrix m = codec.encode_audio(w10);
    CHECK(m.n_frames() == 750);
    CHECK(m.codes.dim(1) == 4);
    for (int i = 0; i < m.n_frames(); ++i)
        for (int s = 0; s < 4; ++s) {
            CHECK(m.codes.at(i, s) >= 0);
            CHECK(m.codes.at(i, s) < 1024);
        }
    Waveform w1 = make_sine(220.0, 1.0);
    CHECK(codec.encode_audio(w1).n_frames() == 75);

    TokenSequence seq = select_first_codebook(m);
    CHECK(seq.tokens.size() == 750);
    for (int i = 0; i < 750; ++i) CHECK(seq.tokens[size_t(i)] == int(m.codes.at(i, 0)));
}

TEST_CASE("select_first_codebook: empty matrix") {
    CodeMatrix m;
    m.codes = Tensor<int32_t>({0, 4});
    CHECK(select_first_codebook(m).tokens.empty());
}

TEST_CASE("encode_audio deterministic under a frozen codec") {
    auto codec = Codec<float>::make(7, 8, 16, 4, 6);
    codec.frozen = true;
    Waveform w = make_noise(0.7, 0.4, 55);
    CodeMatrix a = codec.encode_audio(w);
    CodeMatrix b = codec.encode_audio(w);
    CHECK(a.codes.data == b.codes.data);
}

TEST_CASE("decode_tokens: one mel frame per token") {
    auto codec = Codec<float>::make(8, 8, 16, 4, 6);
    Waveform w = make_noise(1.0, 0.4, 66);
    TokenSequence seq = select_first_codebook(codec.encode_audio(w));
    REQUIRE(seq.tokens.size() == 75);
    MelSpectrogram mel = codec.decode_tokens(seq);
    CHECK(mel.n_frames() == 75);
    CHECK(mel.frames.dim(1) == 80);
    CHECK(mel.frames.all_finite());

    MelSpectrogram mel2 = codec.decode_tokens(seq);
    CHECK(std::memcmp(mel.frames.data.data(), mel2.frames.data.data(),
                      mel.frames.data.size() * sizeof(float)) == 0);

    TokenSequence empty;
    CHECK(codec.decode_tokens(empty).n_frames() == 0);

    TokenSequence bad;
    bad.tokens = {3, kSosToken};
    CHECK_THROWS_AS(codec.decode_tokens(bad), DataError);
}

TEST_CASE("TokenSequence validation") {
    TokenSequence ok;
    ok.tokens = {1, 2, 3, kEosToken, kPadToken, kPadToken};
    CHECK_NOTHROW(ok.validate());
    TokenSequence two_eos;
    two_eos.tokens = {1, kEosToken, kEosToken};
    CHECK_THROWS_AS(two_eos.validate(), DataError);
    TokenSequence tail;
    tail.tokens = {1, kEosToken, 5};
    CHECK_THROWS_AS(tail.validate(), DataError);
    TokenSequence out_of_range;
    out_of_range.tokens = {kLmVocab};
    CHECK_THROWS_AS(out_of_range.validate(), DataError);
    CHECK(ok.audio_only() == false);
    TokenSequence audio;
    audio.tokens = {0, 5, 1023};
    CHECK(audio.audio_only());
}

TEST_CASE("train_codec: reconstruction improves on a sine corpus") {
    std::vector<Waveform> corpus;
    for (int i = 0; i < 20; ++i)
        corpus.push_back(make_sine(120.0 + 37.0 * i, 1.0, 0.5));
    auto codec = Codec<float>::make(9, /*code_dim=*/16, /*entries=*/64, 8, 16);
    CodecTrainConfig cfg;
    cfg.steps = 200;
    cfg.batch = 2;
    cfg.crop_min_s = 0.5;
    cfg.crop_max_s = 1.0;
    CodecTrainStats stats = train_codec(codec, corpus, cfg);
    CHECK(stats.final_recon < stats.initial_recon);
    CHECK(codec.frozen);

    for (const auto& s : codec.rvq.stages) CHECK(s.value.all_finite());
    // zero entry stays pinned through training
    for (const auto& s : codec.rvq.stages)
        for (int j = 0; j < codec.code_dim; ++j) CHECK(s.value.at(0, j) == 0.0f);

    Waveform w = corpus[3];
    CodeMatrix a = codec.encode_audio(w);
    CodeMatrix b = codec.encode_audio(w);
    CHECK(a.codes.data == b.codes.data);

    // trained codebooks discriminate non-stationary content: a frequency
    // sweep must not collapse to a single repeated token
    Waveform chirp;
    chirp.sample_rate = kSampleRate;
    chirp.samples.resize(22050);
    for (size_t i = 0; i < chirp.samples.size(); ++i) {
        double t = double(i) / kSampleRate;
        chirp.samples[i] = float(0.5 * std::sin(2.0 * kTestPi * (150.0 + 900.0 * t) * t));
    }
    std::set<int> distinct;
    for (int t : select_first_codebook(codec.encode_audio(chirp)).tokens) distinct.insert(t);
    CHECK(distinct.size() > 1);

    CHECK_THROWS_AS(train_codec(codec, corpus, cfg), ModelError); // already frozen
}

TEST_CASE("codec checkpoint round trip") {
    TempDir tmp;
    auto codec = Codec<float>::make(10, 8, 16, 4, 6);
    save_model(tmp.file("codec.bin"), codec);
    auto restored = Codec<float>::make(0, 8, 16, 4, 6);
    load_model(tmp.file("codec.bin"), restored);
    uint64_t ha = 0, hb = 0;
    codec.for_each_param([&](const Param<float>& p) { ha = digest_tensor(p.value, ha + 1); });
    restored.for_each_param([&](const Param<float>& p) { hb = digest_tensor(p.value, hb + 1); });
    CHECK(ha == hb);

    auto wrong = Codec<float>::make(0, 8, 16, 4, 8); // different width
    CHECK_THROWS_AS(load_model(tmp.file("codec.bin"), wrong), ModelError);
}
