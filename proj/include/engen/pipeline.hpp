#pragma once

#include <memory>
#include <string>
#include <vector>

#include "engen/codec_lm.hpp"
#include "engen/neural_codec.hpp"
#include "engen/speaker_encoder.hpp"
#include "engen/text_frontend.hpp"
#include "engen/vocoder.hpp"

namespace engen {

struct ManifestRecord {
    std::string audio_path;
    std::string speaker;
    double duration_s = 0.0;
    std::string transcript;
};

struct Manifest {
    std::vector<ManifestRecord> records;
};

// One record per line: path<TAB>speaker<TAB>duration<TAB>transcript.
// require_audio additionally checks that every path resolves.
Manifest load_manifest(const std::string& path, bool require_audio = false);

struct CorpusStats {
    double hours = 0.0;
    double mean_audio_length = 0.0; // seconds
    int64_t total_words = 0;
    int64_t vocab_size = 0; // unique normalized words
    int64_t sentences = 0;
    double mean_word_freq = 0.0; // total_words / vocab_size
    int64_t total_recordings = 0;
};

// Words: lowercase, strip leading/trailing punctuation, split on whitespace.
// Sentences: runs terminated by . ! or ?; an unterminated tail counts once.
CorpusStats corpus_stats(const Manifest& m);

// synth wall-clock over produced audio duration; < 1.0 is faster than
// real time.
double compute_rtf(double synth_seconds, double audio_seconds);

struct SynthesisReport {
    std::string text;
    std::string output_path;
    double synth_seconds = 0.0;
    double audio_seconds = 0.0;
    double rtf = 0.0;
    int64_t token_count = 0;
};

struct ModelBundle {
    BpeModel bpe;
    LmConfig lm_cfg;
    TextEncoder<float> text_enc;
    SpeakerEncoder<float> spk_enc;
    Codec<float> codec;
    CodecLm<float> lm;
    std::unique_ptr<VocoderNet<float>> vocoder; // absent -> deterministic fallback
    VocoderConfig voc_cfg;
};

// Reconstructs the codec with the widths recorded in the checkpoint's
// tensor shapes, then loads the weights. Loaded codecs are frozen.
Codec<float> load_codec(const std::string& path);

// Directory layout: bpe.txt, lm.cfg, codec.bin, lm.bin, vocoder.bin (optional).
ModelBundle load_bundle(const std::string& dir);
void save_bundle(const std::string& dir, const BpeModel& bpe, const Codec<float>& codec,
                 const CodecLm<float>& lm, const VocoderNet<float>* vocoder);

// bpe_encode -> encode_text -> speaker_latents -> generate -> decode_tokens
// -> vocode, wall-clock timed through vocode. Writes PCM16 mono output when
// out_path is non-empty.
SynthesisReport synthesize(const std::string& text, const Waveform& reference,
                           ModelBundle& models, const SamplingConfig& sampling, uint64_t seed,
                           const std::string& out_path, Waveform* out_wav = nullptr);

struct LengthProbeBucket {
    int lo = 0, hi = 0;
    int64_t count = 0;
    double mean_nll = 0.0;
};

// Teacher-forced NLL grouped by text token length: 1-25, 26-50, 51-75,
// 76-100, 101+. Buckets with count 0 carry no mean.
std::vector<LengthProbeBucket> length_probe(
    ModelBundle& models, const std::vector<std::pair<std::string, Waveform>>& items);

} // namespace engen
