#pragma once

#include <array>

#include "engen/audio_io.hpp"
#include "engen/autodiff.hpp"
#include "engen/common.hpp"

namespace engen {

constexpr int kRvqStages = 4;
constexpr int kCodebookEntries = 1024;
constexpr int kFrameSamples = 294; // stride product 2*3*7*7; 22050/294 = 75 Hz
constexpr int kFrameRateHz = 75;
constexpr int kCodeDim = 64;

// LM token space: 1024 audio codes + specials.
constexpr int kAudioVocab = 1024;
constexpr int kSosToken = 1024;
constexpr int kEosToken = 1025;
constexpr int kPadToken = 1026;
constexpr int kLmVocab = 1027;

// Helper shared by all model forwards: trainable weights enter the graph as
// parameters (caller must hold mutable ownership), frozen ones as constants.
template <typename T>
typename Graph<T>::NodeId param_or_const(Graph<T>& g, const Param<T>& p, bool trainable) {
    if (trainable) return g.param(const_cast<Param<T>&>(p));
    return g.constant(p.value);
}

struct CodeMatrix {
    Tensor<int32_t> codes; // [n_frames, kRvqStages]

    int n_frames() const { return codes.rank() == 2 ? codes.dim(0) : 0; }
};

struct TokenSequence {
    std::vector<int> tokens;

    bool audio_only() const {
        for (int t : tokens)
            if (t < 0 || t >= kAudioVocab) return false;
        return true;
    }

    // range check + at most one EOS, nothing after it except PAD
    void validate() const {
        bool seen_eos = false;
        for (int t : tokens) {
            if (t < 0 || t >= kLmVocab)
                throw DataError("token id " + std::to_string(t) + " out of range");
            if (seen_eos && t != kPadToken)
                throw DataError("non-PAD token after EOS");
            if (t == kEosToken) {
                if (seen_eos) throw DataError("multiple EOS tokens");
                seen_eos = true;
            }
        }
    }
};

// Column 0 carries the phonetic/content information; the LM models only it.
inline TokenSequence select_first_codebook(const CodeMatrix& m) {
    TokenSequence seq;
    seq.tokens.reserve(size_t(m.n_frames()));
    for (int i = 0; i < m.n_frames(); ++i) seq.tokens.push_back(int(m.codes.at(i, 0)));
    return seq;
}

struct RvqResult {
    std::array<int, kRvqStages> ids{};
    std::array<double, kRvqStages> residual_norms{}; // after each stage's subtraction
};

template <typename T>
struct RvqCodebooks {
    std::array<Param<T>, kRvqStages> stages; // each [entries, code_dim], row 0 pinned zero
    int code_dim = kCodeDim;

    void pin_zero_entry() {
        for (auto& s : stages)
            for (int j = 0; j < code_dim; ++j) s.value.at(0, j) = T(0);
    }
};

// Nearest-neighbour cascade over the running residual; ties break toward the
// smallest index. residual_norms[k] is the norm left after stage k.
template <typename T>
RvqResult rvq_quantize(const T* latent, int code_dim, const RvqCodebooks<T>& books) {
    std::vector<double> residual(static_cast<size_t>(code_dim));
    for (int j = 0; j < code_dim; ++j) residual[size_t(j)] = double(latent[j]);
    RvqResult res;
    for (int s = 0; s < kRvqStages; ++s) {
        const Tensor<T>& book = books.stages[size_t(s)].value;
        int best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int e = 0; e < book.dim(0); ++e) {
            const T* row = book.row(e);
            double d2 = 0.0;
            for (int j = 0; j < code_dim; ++j) {
                double d = residual[size_t(j)] - double(row[j]);
                d2 += d * d;
            }
            if (d2 < best_d2) {
                best_d2 = d2;
                best = e;
            }
        }
        const T* row = book.row(best);
        double norm2 = 0.0;
        for (int j = 0; j < code_dim; ++j) {
            residual[size_t(j)] -= double(row[j]);
            norm2 += residual[size_t(j)] * residual[size_t(j)];
        }
        res.ids[size_t(s)] = best;
        res.residual_norms[size_t(s)] = std::sqrt(norm2);
    }
    return res;
}

// Convolutional encoder (strides 2*3*7*7 = 294) + 4-stage RVQ + small
// convolutional decoder producing one 80-bin log-mel frame per token.
template <typename T>
struct Codec {
    int code_dim = kCodeDim;
    // encoder, strides 2,3,7,7 with kernel == stride so frame math is exact
    Param<T> e1_w, e1_b, e2_w, e2_b, e3_w, e3_b, e4_w, e4_b, e5_w, e5_b, e6_w, e6_b;
    RvqCodebooks<T> rvq;
    // decoder: code vector sequence -> log-mel frames
    Param<T> d1_w, d1_b, d2_w, d2_b, d3_w, d3_b;
    bool frozen = false;

    // Reduced widths/entries are for test fixtures; frame arithmetic only
    // depends on the strides.
    static Codec make(uint64_t seed, int code_dim = kCodeDim, int entries = kCodebookEntries,
                      int c_early = 32, int c_late = 64) {
        Rng rng(seed);
        auto conv = [&rng](std::string name, int co, int ci, int k) {
            T std_dev = T(1.0 / std::sqrt(double(ci) * k));
            return Param<T>(std::move(name), Tensor<T>::randn({co, ci, k}, rng, std_dev));
        };
        auto bias = [](std::string name, int co) {
            return Param<T>(std::move(name), Tensor<T>::zeros({co}));
        };
        Codec c;
        c.code_dim = code_dim;
        c.e1_w = conv("codec.e1_w", c_early, 1, 2);
        c.e1_b = bias("codec.e1_b", c_early);
        c.e2_w = conv("codec.e2_w", c_early, c_early, 3);
        c.e2_b = bias("codec.e2_b", c_early);
        c.e3_w = conv("codec.e3_w", c_late, c_early, 7);
        c.e3_b = bias("codec.e3_b", c_late);
        c.e4_w = conv("codec.e4_w", c_late, c_late, 7);
        c.e4_b = bias("codec.e4_b", c_late);
        c.e5_w = conv("codec.e5_w", c_late, c_late, 3);
        c.e5_b = bias("codec.e5_b", c_late);
        c.e6_w = conv("codec.e6_w", code_dim, c_late, 1);
        c.e6_b = bias("codec.e6_b", code_dim);
        for (int s = 0; s < kRvqStages; ++s) {
            c.rvq.stages[size_t(s)] = Param<T>("codec.book" + std::to_string(s),
                                               Tensor<T>::randn({entries, code_dim}, rng, T(0.5)));
        }
        c.rvq.code_dim = code_dim;
        c.rvq.pin_zero_entry();
        c.d1_w = conv("codec.d1_w", c_late, code_dim, 3);
        c.d1_b = bias("codec.d1_b", c_late);
        c.d2_w = conv("codec.d2_w", c_late, c_late, 3);
        c.d2_b = bias("codec.d2_b", c_late);
        c.d3_w = conv("codec.d3_w", kNumMels, c_late, 1);
        c.d3_b = bias("codec.d3_b", kNumMels);
        return c;
    }

    // wav node [1,N] -> latents [code_dim, floor(N/294)]
    typename Graph<T>::NodeId encode_graph(Graph<T>& g, typename Graph<T>::NodeId wav,
                                           bool trainable) const {
        bool t = trainable && !frozen;
        auto x = g.conv1d(wav, param_or_const(g, e1_w, t), param_or_const(g, e1_b, t), 2, 0);
        x = g.gelu(x);
        x = g.conv1d(x, param_or_const(g, e2_w, t), param_or_const(g, e2_b, t), 3, 0);
        x = g.gelu(x);
        x = g.conv1d(x, param_or_const(g, e3_w, t), param_or_const(g, e3_b, t), 7, 0);
        x = g.gelu(x);
        x = g.conv1d(x, param_or_const(g, e4_w, t), param_or_const(g, e4_b, t), 7, 0);
        x = g.gelu(x);
        x = g.conv1d(x, param_or_const(g, e5_w, t), param_or_const(g, e5_b, t), 1, 1);
        x = g.gelu(x);
        return g.conv1d(x, param_or_const(g, e6_w, t), param_or_const(g, e6_b, t), 1, 0);
    }

    // code vectors [code_dim, F] -> log-mel frames [n_mels, F]
    typename Graph<T>::NodeId decode_graph(Graph<T>& g, typename Graph<T>::NodeId zq,
                                           bool trainable) const {
        bool t = trainable && !frozen;
        auto x = g.conv1d(zq, param_or_const(g, d1_w, t), param_or_const(g, d1_b, t), 1, 1);
        x = g.gelu(x);
        x = g.conv1d(x, param_or_const(g, d2_w, t), param_or_const(g, d2_b, t), 1, 1);
        x = g.gelu(x);
        return g.conv1d(x, param_or_const(g, d3_w, t), param_or_const(g, d3_b, t), 1, 0);
    }

    // Waveform -> [floor(N/294) x 4] code ids.
    CodeMatrix encode_audio(const Waveform& w) const {
        if (w.sample_rate != kSampleRate) throw DataError("encode_audio expects 22050 Hz input");
        const int64_t n = int64_t(w.samples.size());
        if (n < kFrameSamples)
            throw DataError("encode_audio: waveform shorter than one frame (294 samples)");
        Graph<T> g(false);
        Tensor<T> wav({1, int(n)});
        for (int64_t i = 0; i < n; ++i) wav.data[size_t(i)] = T(w.samples[size_t(i)]);
        auto latents = g.val(encode_graph(g, g.constant(std::move(wav)), false));
        const int f = latents.dim(1);
        CodeMatrix m;
        m.codes = Tensor<int32_t>({f, kRvqStages});
        std::vector<T> frame(static_cast<size_t>(code_dim));
        for (int t = 0; t < f; ++t) {
            for (int j = 0; j < code_dim; ++j) frame[size_t(j)] = latents.at(j, t);
            RvqResult r = rvq_quantize(frame.data(), code_dim, rvq);
            for (int s = 0; s < kRvqStages; ++s) m.codes.at(t, s) = r.ids[size_t(s)];
        }
        return m;
    }

    // Audio-token sequence -> log-mel frames via codebook-0 embeddings,
    // one frame per token.
    MelSpectrogram decode_tokens(const TokenSequence& seq) const {
        const int entries = rvq.stages[0].value.dim(0);
        for (int t : seq.tokens) {
            if (t < 0 || t >= kAudioVocab)
                throw DataError("decode_tokens: special or invalid token " + std::to_string(t));
            if (t >= entries)
                throw DataError("decode_tokens: token " + std::to_string(t) +
                                " exceeds this codec's codebook (" + std::to_string(entries) +
                                " entries)");
        }
        MelSpectrogram mel;
        const int n = int(seq.tokens.size());
        if (n == 0) {
            mel.frames = Tensor<float>({0, kNumMels});
            return mel;
        }
        Graph<T> g(false);
        Tensor<T> zq({code_dim, n});
        const Tensor<T>& book0 = rvq.stages[0].value;
        for (int t = 0; t < n; ++t) {
            const T* row = book0.row(seq.tokens[size_t(t)]);
            for (int j = 0; j < code_dim; ++j) zq.at(j, t) = row[j];
        }
        auto out = g.val(decode_graph(g, g.constant(std::move(zq)), false));
        mel.frames = Tensor<float>({n, kNumMels});
        for (int t = 0; t < n; ++t)
            for (int m2 = 0; m2 < kNumMels; ++m2) mel.frames.at(t, m2) = float(out.at(m2, t));
        return mel;
    }

    std::vector<Param<T>*> trainable_params() {
        std::vector<Param<T>*> ps{&e1_w, &e1_b, &e2_w, &e2_b, &e3_w, &e3_b,
                                  &e4_w, &e4_b, &e5_w, &e5_b, &e6_w, &e6_b,
                                  &d1_w, &d1_b, &d2_w, &d2_b, &d3_w, &d3_b};
        for (auto& s : rvq.stages) ps.push_back(&s);
        return ps;
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        for (auto* p : const_cast<Codec*>(this)->trainable_params()) fn(*p);
    }
};

} // namespace engen
