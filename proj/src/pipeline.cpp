#include "engen/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include "engen/audio_io.hpp"
#include "engen/checkpoint.hpp"
#include "engen/losses.hpp"

namespace fs = std::filesystem;

namespace engen {

Manifest load_manifest(const std::string& path, bool require_audio) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest: " + path);
    Manifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        ManifestRecord rec;
        size_t p1 = line.find('\t');
        size_t p2 = p1 == std::string::npos ? p1 : line.find('\t', p1 + 1);
        size_t p3 = p2 == std::string::npos ? p2 : line.find('\t', p2 + 1);
        if (p3 == std::string::npos)
            throw DataError("manifest line " + std::to_string(line_no) +
                            ": want path<TAB>speaker<TAB>duration<TAB>transcript");
        rec.audio_path = line.substr(0, p1);
        rec.speaker = line.substr(p1 + 1, p2 - p1 - 1);
        try {
            rec.duration_s = std::stod(line.substr(p2 + 1, p3 - p2 - 1));
        } catch (const std::exception&) {
            throw DataError("manifest line " + std::to_string(line_no) + ": bad duration");
        }
        rec.transcript = line.substr(p3 + 1);
        if (rec.duration_s <= 0.0)
            throw DataError("manifest line " + std::to_string(line_no) + ": duration must be > 0");
        if (require_audio && !fs::exists(rec.audio_path))
            throw DataError("manifest line " + std::to_string(line_no) +
                            ": audio file not found: " + rec.audio_path);
        m.records.push_back(std::move(rec));
    }
    return m;
}

namespace {

std::vector<std::string> normalized_words(const std::string& transcript) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        size_t b = 0, e = cur.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(cur[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(cur[e - 1]))) --e;
        if (e > b) words.push_back(cur.substr(b, e - b));
        cur.clear();
    };
    for (char c : transcript) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else {
            cur += char(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    flush();
    return words;
}

int64_t count_sentences(const std::string& transcript) {
    int64_t n = 0;
    bool pending = false; // saw a non-space char since the last terminator
    for (char c : transcript) {
        if (c == '.' || c == '!' || c == '?') {
            if (pending) ++n;
            pending = false;
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            pending = true;
        }
    }
    if (pending) ++n;
    return n;
}

} // namespace

CorpusStats corpus_stats(const Manifest& m) {
    if (m.records.empty()) throw DataError("corpus_stats: empty manifest");
    CorpusStats s;
    s.total_recordings = int64_t(m.records.size());
    std::vector<double> durations;
    durations.reserve(m.records.size());
    std::set<std::string> vocab;
    for (const auto& rec : m.records) {
        durations.push_back(rec.duration_s);
        for (auto& w : normalized_words(rec.transcript)) {
            ++s.total_words;
            vocab.insert(std::move(w));
        }
        s.sentences += count_sentences(rec.transcript);
    }
    // sorted summation keeps the result exactly permutation-invariant
    std::sort(durations.begin(), durations.end());
    double total_s = 0.0;
    for (double d : durations) total_s += d;
    s.hours = total_s / 3600.0;
    s.mean_audio_length = total_s / double(s.total_recordings);
    s.vocab_size = int64_t(vocab.size());
    s.mean_word_freq = s.vocab_size > 0 ? double(s.total_words) / double(s.vocab_size) : 0.0;
    return s;
}

double compute_rtf(double synth_seconds, double audio_seconds) {
    if (audio_seconds <= 0.0) throw DataError("compute_rtf: audio_seconds must be > 0");
    if (synth_seconds < 0.0) throw DataError("compute_rtf: synth_seconds must be >= 0");
    return synth_seconds / audio_seconds;
}

Codec<float> load_codec(const std::string& path) {
    auto ts = load_tensors(path);
    auto shape_of = [&](const char* name) -> const std::vector<int>& {
        auto it = ts.find(name);
        if (it == ts.end()) throw ModelError(std::string("codec checkpoint missing ") + name);
        return it->second.shape;
    };
    const auto& e1 = shape_of("codec.e1_w"); // [c_early, 1, 2]
    const auto& e3 = shape_of("codec.e3_w"); // [c_late, c_early, 7]
    const auto& e6 = shape_of("codec.e6_w"); // [code_dim, c_late, 1]
    const auto& b0 = shape_of("codec.book0"); // [entries, code_dim]
    Codec<float> codec = Codec<float>::make(0, e6[0], b0[0], e1[0], e3[0]);
    load_model(path, codec);
    codec.frozen = true;
    return codec;
}

ModelBundle load_bundle(const std::string& dir) {
    ModelBundle b;
    b.bpe = bpe_load(dir + "/bpe.txt");
    auto kv = load_kv(dir + "/lm.cfg");
    auto geti = [&kv, &dir](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw ModelError("lm.cfg missing key " + key + " in " + dir);
        return std::stoi(it->second);
    };
    b.lm_cfg.hidden_dim = geti("hidden_dim");
    b.lm_cfg.n_heads = geti("n_heads");
    b.lm_cfg.n_blocks = geti("n_blocks");
    b.lm_cfg.ffn_dim = geti("ffn_dim");
    b.lm_cfg.vocab = geti("vocab");
    b.lm_cfg.max_audio_tokens = geti("max_audio_tokens");
    b.lm_cfg.max_text_tokens = geti("max_text_tokens");
    b.lm_cfg.d_spk = geti("d_spk");
    b.lm_cfg.validate();

    TextEncoderConfig tc;
    tc.vocab_size = b.bpe.vocab_size();
    tc.d_model = b.lm_cfg.hidden_dim;
    b.text_enc = TextEncoder<float>::make(tc);
    b.spk_enc = SpeakerEncoder<float>::make();

    b.codec = load_codec(dir + "/codec.bin");

    b.lm = CodecLm<float>::make(b.lm_cfg, 0);
    load_model(dir + "/lm.bin", b.lm);

    if (fs::exists(dir + "/vocoder.bin")) {
        b.vocoder = std::make_unique<VocoderNet<float>>(VocoderNet<float>::make(0));
        load_model(dir + "/vocoder.bin", *b.vocoder);
        b.voc_cfg.mode = VocoderMode::kNeural;
    } else {
        b.voc_cfg.mode = VocoderMode::kDeterministic;
    }
    return b;
}

void save_bundle(const std::string& dir, const BpeModel& bpe, const Codec<float>& codec,
                 const CodecLm<float>& lm, const VocoderNet<float>* vocoder) {
    fs::create_directories(dir);
    bpe_save(bpe, dir + "/bpe.txt");
    const LmConfig& c = lm.cfg;
    save_kv(dir + "/lm.cfg", {{"hidden_dim", std::to_string(c.hidden_dim)},
                              {"n_heads", std::to_string(c.n_heads)},
                              {"n_blocks", std::to_string(c.n_blocks)},
                              {"ffn_dim", std::to_string(c.ffn_dim)},
                              {"vocab", std::to_string(c.vocab)},
                              {"max_audio_tokens", std::to_string(c.max_audio_tokens)},
                              {"max_text_tokens", std::to_string(c.max_text_tokens)},
                              {"d_spk", std::to_string(c.d_spk)}});
    save_model(dir + "/codec.bin", codec);
    save_model(dir + "/lm.bin", lm);
    if (vocoder != nullptr) save_model(dir + "/vocoder.bin", *vocoder);
}

SynthesisReport synthesize(const std::string& text, const Waveform& reference,
                           ModelBundle& models, const SamplingConfig& sampling, uint64_t seed,
                           const std::string& out_path, Waveform* out_wav) {
    if (text.empty()) throw UsageError("synthesize: empty text");

    auto t0 = std::chrono::steady_clock::now();
    std::vector<int> ids = bpe_encode(models.bpe, text);
    Tensor<float> x_te = models.text_enc.encode(ids);
    Tensor<float> x_se = models.spk_enc.latents(reference);
    TokenSequence tokens = models.lm.generate(x_te, x_se, sampling, seed);
    if (tokens.tokens.empty())
        throw ModelError("synthesize: model emitted EOS immediately, no audio produced");
    MelSpectrogram mel = models.codec.decode_tokens(tokens);
    Waveform wav = vocode(mel, x_se, models.vocoder.get(), models.voc_cfg);
    auto t1 = std::chrono::steady_clock::now();

    SynthesisReport rep;
    rep.text = text;
    rep.output_path = out_path;
    rep.token_count = int64_t(tokens.tokens.size());
    rep.synth_seconds = std::chrono::duration<double>(t1 - t0).count();
    rep.audio_seconds = double(rep.token_count) / double(kFrameRateHz);
    rep.rtf = compute_rtf(rep.synth_seconds, rep.audio_seconds);
    if (!out_path.empty()) save_wav(out_path, wav);
    if (out_wav != nullptr) *out_wav = std::move(wav);
    return rep;
}

std::vector<LengthProbeBucket> length_probe(
    ModelBundle& models, const std::vector<std::pair<std::string, Waveform>>& items) {
    std::vector<LengthProbeBucket> buckets = {
        {1, 25, 0, 0.0}, {26, 50, 0, 0.0}, {51, 75, 0, 0.0}, {76, 100, 0, 0.0},
        {101, std::numeric_limits<int>::max(), 0, 0.0}};
    for (const auto& [text, wav] : items) {
        std::vector<int> ids = bpe_encode(models.bpe, text);
        if (ids.empty()) continue;
        const int n_text = int(ids.size());
        Tensor<float> x_te = models.text_enc.encode(ids);
        Tensor<float> x_se = models.spk_enc.latents(wav);
        TokenSequence seq = select_first_codebook(models.codec.encode_audio(wav));
        std::vector<int> tokens = seq.tokens;
        int max_tokens = models.lm_cfg.max_audio_tokens - 1;
        if (int(tokens.size()) > max_tokens) tokens.resize(size_t(max_tokens));
        std::vector<int> input(1, kSosToken);
        input.insert(input.end(), tokens.begin(), tokens.end());
        std::vector<int> targets = tokens;
        targets.push_back(kEosToken);
        Tensor<float> logits = models.lm.forward(input, x_te, x_se);
        double nll = loss_ce(logits, targets);
        for (auto& b : buckets) {
            if (n_text >= b.lo && n_text <= b.hi) {
                b.mean_nll = (b.mean_nll * double(b.count) + nll) / double(b.count + 1);
                ++b.count;
                break;
            }
        }
    }
    return buckets;
}

} // namespace engen
