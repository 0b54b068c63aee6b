#pragma once

// Neural codec language model: autoregressive transformer over audio tokens.
// Block order follows the described stack: masked self-attention, layer norm
// with residual from the block input, text cross-attention, layer norm with
// residual, speaker cross-attention (residual from the preceding sub-layer),
// then feed-forward with GeLU and a final layer norm. Post-norm throughout.

#include <algorithm>
#include <string>
#include <vector>

#include "engen/autodiff.hpp"
#include "engen/common.hpp"
#include "engen/neural_codec.hpp"
#include "engen/speaker_encoder.hpp"
#include "engen/text_frontend.hpp"

namespace engen {

struct LmConfig {
    int hidden_dim = 512;
    int n_heads = 4;
    int n_blocks = 6;
    int ffn_dim = 2048; // 4x hidden by default; 1024 also supported via config
    int vocab = kLmVocab;
    int max_audio_tokens = 604;
    int max_text_tokens = kMaxTextTokens;
    int d_spk = kSpkDim;

    // S/M/L ladder: (512,4,6), (768,8,13), (1024,16,26)
    static LmConfig preset(char which) {
        LmConfig c;
        switch (which) {
        case 'S': c.hidden_dim = 512; c.n_heads = 4; c.n_blocks = 6; break;
        case 'M': c.hidden_dim = 768; c.n_heads = 8; c.n_blocks = 13; break;
        case 'L': c.hidden_dim = 1024; c.n_heads = 16; c.n_blocks = 26; break;
        default: throw UsageError("unknown LM preset (want S, M or L)");
        }
        c.ffn_dim = 4 * c.hidden_dim;
        return c;
    }

    static LmConfig custom(int hidden, int heads, int blocks) {
        LmConfig c;
        c.hidden_dim = hidden;
        c.n_heads = heads;
        c.n_blocks = blocks;
        c.ffn_dim = 4 * hidden;
        return c;
    }

    void validate() const {
        if (hidden_dim <= 0 || n_heads <= 0 || n_blocks <= 0 || ffn_dim <= 0)
            throw UsageError("LmConfig: dimensions must be positive");
        if (hidden_dim % n_heads != 0)
            throw UsageError("LmConfig: hidden_dim must be divisible by n_heads");
    }

    int max_positions() const { return max_audio_tokens + 1; } // SOS + audio tokens
};

// Single source of truth for the parameter inventory; make() and
// count_parameters() both walk this list.
inline std::vector<std::pair<std::string, std::vector<int>>> lm_param_shapes(const LmConfig& c) {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    const int h = c.hidden_dim, f = c.ffn_dim, ds = c.d_spk, v = c.vocab;
    out.push_back({"lm.tok_emb", {v, h}});
    out.push_back({"lm.pos_emb", {c.max_positions(), h}});
    for (int b = 0; b < c.n_blocks; ++b) {
        std::string p = "lm.blk" + std::to_string(b) + ".";
        auto attn = [&](const std::string& tag, int kv_dim) {
            out.push_back({p + tag + "_wq", {h, h}});
            out.push_back({p + tag + "_bq", {h}});
            out.push_back({p + tag + "_wk", {kv_dim, h}});
            out.push_back({p + tag + "_bk", {h}});
            out.push_back({p + tag + "_wv", {kv_dim, h}});
            out.push_back({p + tag + "_bv", {h}});
            out.push_back({p + tag + "_wo", {h, h}});
            out.push_back({p + tag + "_bo", {h}});
        };
        attn("sa", h);
        out.push_back({p + "ln1_g", {h}});
        out.push_back({p + "ln1_b", {h}});
        attn("ct", h);
        out.push_back({p + "ln2_g", {h}});
        out.push_back({p + "ln2_b", {h}});
        attn("cs", ds);
        out.push_back({p + "ln3_g", {h}});
        out.push_back({p + "ln3_b", {h}});
        out.push_back({p + "ff_w1", {h, f}});
        out.push_back({p + "ff_b1", {f}});
        out.push_back({p + "ff_w2", {f, h}});
        out.push_back({p + "ff_b2", {h}});
        out.push_back({p + "ln4_g", {h}});
        out.push_back({p + "ln4_b", {h}});
    }
    out.push_back({"lm.head_w", {h, v}});
    out.push_back({"lm.head_b", {v}});
    return out;
}

inline int64_t count_parameters(const LmConfig& c) {
    int64_t total = 0;
    for (const auto& [name, shape] : lm_param_shapes(c)) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        total += n;
    }
    return total;
}

struct SamplingConfig {
    enum Kind { kGreedy, kTopK } kind = kGreedy;
    int k = 50;
    double temperature = 0.9;

    static SamplingConfig greedy() { return {}; }
    static SamplingConfig top_k(int k, double temperature) { return {kTopK, k, temperature}; }
};

template <typename T>
struct CodecLm {
    LmConfig cfg;

    struct Block {
        Param<T> sa_wq, sa_bq, sa_wk, sa_bk, sa_wv, sa_bv, sa_wo, sa_bo;
        Param<T> ln1_g, ln1_b;
        Param<T> ct_wq, ct_bq, ct_wk, ct_bk, ct_wv, ct_bv, ct_wo, ct_bo;
        Param<T> ln2_g, ln2_b;
        Param<T> cs_wq, cs_bq, cs_wk, cs_bk, cs_wv, cs_bv, cs_wo, cs_bo;
        Param<T> ln3_g, ln3_b;
        Param<T> ff_w1, ff_b1, ff_w2, ff_b2;
        Param<T> ln4_g, ln4_b;
    };

    Param<T> tok_emb, pos_emb;
    std::vector<Block> blocks;
    Param<T> head_w, head_b;

    static CodecLm make(const LmConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(seed);
        CodecLm lm;
        lm.cfg = cfg;
        const T res_scale = T(1.0 / std::sqrt(2.0 * cfg.n_blocks));
        auto init = [&rng, res_scale](const std::string& name, const std::vector<int>& shape) {
            bool is_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, "_g") == 0;
            if (is_gain) return Param<T>(name, Tensor<T>::full(shape, T(1)));
            if (shape.size() == 1) return Param<T>(name, Tensor<T>::zeros(shape));
            T std_dev = T(0.02);
            bool residual_proj = name.find("_wo") != std::string::npos ||
                                 name.find("ff_w2") != std::string::npos;
            if (residual_proj) std_dev *= res_scale;
            return Param<T>(name, Tensor<T>::randn(shape, rng, std_dev));
        };
        auto shapes = lm_param_shapes(cfg);
        size_t idx = 0;
        auto next = [&]() {
            auto& [name, shape] = shapes[idx++];
            return init(name, shape);
        };
        lm.tok_emb = next();
        lm.pos_emb = next();
        for (int b = 0; b < cfg.n_blocks; ++b) {
            Block blk;
            blk.sa_wq = next(); blk.sa_bq = next(); blk.sa_wk = next(); blk.sa_bk = next();
            blk.sa_wv = next(); blk.sa_bv = next(); blk.sa_wo = next(); blk.sa_bo = next();
            blk.ln1_g = next(); blk.ln1_b = next();
            blk.ct_wq = next(); blk.ct_bq = next(); blk.ct_wk = next(); blk.ct_bk = next();
            blk.ct_wv = next(); blk.ct_bv = next(); blk.ct_wo = next(); blk.ct_bo = next();
            blk.ln2_g = next(); blk.ln2_b = next();
            blk.cs_wq = next(); blk.cs_bq = next(); blk.cs_wk = next(); blk.cs_bk = next();
            blk.cs_wv = next(); blk.cs_bv = next(); blk.cs_wo = next(); blk.cs_bo = next();
            blk.ln3_g = next(); blk.ln3_b = next();
            blk.ff_w1 = next(); blk.ff_b1 = next(); blk.ff_w2 = next(); blk.ff_b2 = next();
            blk.ln4_g = next(); blk.ln4_b = next();
            lm.blocks.push_back(std::move(blk));
        }
        lm.head_w = next();
        lm.head_b = next();
        return lm;
    }

    std::vector<Param<T>*> trainable_params() {
        std::vector<Param<T>*> ps{&tok_emb, &pos_emb};
        for (Block& b : blocks) {
            for (Param<T>* p : {&b.sa_wq, &b.sa_bq, &b.sa_wk, &b.sa_bk, &b.sa_wv, &b.sa_bv,
                                &b.sa_wo, &b.sa_bo, &b.ln1_g, &b.ln1_b, &b.ct_wq, &b.ct_bq,
                                &b.ct_wk, &b.ct_bk, &b.ct_wv, &b.ct_bv, &b.ct_wo, &b.ct_bo,
                                &b.ln2_g, &b.ln2_b, &b.cs_wq, &b.cs_bq, &b.cs_wk, &b.cs_bk,
                                &b.cs_wv, &b.cs_bv, &b.cs_wo, &b.cs_bo, &b.ln3_g, &b.ln3_b,
                                &b.ff_w1, &b.ff_b1, &b.ff_w2, &b.ff_b2, &b.ln4_g, &b.ln4_b})
                ps.push_back(p);
        }
        ps.push_back(&head_w);
        ps.push_back(&head_b);
        return ps;
    }

    // Full teacher-forced forward. shifted_tokens begins with SOS; returns
    // logits node [T x vocab].
    typename Graph<T>::NodeId forward_graph(Graph<T>& g, const std::vector<int>& shifted_tokens,
                                            const Tensor<T>& x_te, const Tensor<T>& x_se,
                                            bool trainable) const {
        const int t = int(shifted_tokens.size());
        check_inputs(t, x_te, x_se);
        for (int tok : shifted_tokens)
            if (tok < 0 || tok >= cfg.vocab)
                throw DataError("LM forward: token id out of range");
        std::vector<int> positions(static_cast<size_t>(t));
        for (int i = 0; i < t; ++i) positions[size_t(i)] = i;
        auto x = g.add(g.gather_rows(param_or_const(g, tok_emb, trainable), shifted_tokens),
                       g.gather_rows(param_or_const(g, pos_emb, trainable), positions));
        auto te = g.constant(x_te);
        auto se = g.constant(x_se);
        for (const Block& blk : blocks) x = block_graph(g, blk, x, te, se, trainable, 0);
        return g.linear(x, param_or_const(g, head_w, trainable),
                        param_or_const(g, head_b, trainable));
    }

    Tensor<T> forward(const std::vector<int>& shifted_tokens, const Tensor<T>& x_te,
                      const Tensor<T>& x_se) const {
        Graph<T> g(false);
        return g.val(forward_graph(g, shifted_tokens, x_te, x_se, false));
    }

    // ---- KV-cached incremental decoding ----

    struct KvCache {
        struct BlockCache {
            Tensor<T> self_k, self_v; // [max_positions, h], first `len` rows valid
            Tensor<T> text_k, text_v; // fixed for the session
            Tensor<T> spk_k, spk_v;
        };
        std::vector<BlockCache> blocks;
        int len = 0;
    };

    // Pre-computes the conditioning keys/values once per session.
    KvCache start_session(const Tensor<T>& x_te, const Tensor<T>& x_se) const {
        check_inputs(1, x_te, x_se);
        KvCache cache;
        const int h = cfg.hidden_dim;
        Graph<T> g(false);
        auto te = g.constant(x_te);
        auto se = g.constant(x_se);
        for (const Block& blk : blocks) {
            typename KvCache::BlockCache bc;
            bc.self_k = Tensor<T>({cfg.max_positions(), h});
            bc.self_v = Tensor<T>({cfg.max_positions(), h});
            bc.text_k = g.val(g.linear(te, g.constant(blk.ct_wk.value), g.constant(blk.ct_bk.value)));
            bc.text_v = g.val(g.linear(te, g.constant(blk.ct_wv.value), g.constant(blk.ct_bv.value)));
            bc.spk_k = g.val(g.linear(se, g.constant(blk.cs_wk.value), g.constant(blk.cs_bk.value)));
            bc.spk_v = g.val(g.linear(se, g.constant(blk.cs_wv.value), g.constant(blk.cs_bv.value)));
            cache.blocks.push_back(std::move(bc));
        }
        return cache;
    }

    // One decoding step: consumes the token at position cache.len, returns
    // logits [vocab] for the next token.
    std::vector<T> step(KvCache& cache, int token) const {
        const int pos = cache.len;
        if (pos >= cfg.max_positions()) throw ModelError("KV cache full");
        if (token < 0 || token >= cfg.vocab) throw DataError("LM step: token id out of range");
        const int h = cfg.hidden_dim;
        Graph<T> g(false);
        Tensor<T> row({1, h});
        const T* te_row = tok_emb.value.row(token);
        const T* pe_row = pos_emb.value.row(pos);
        for (int j = 0; j < h; ++j) row.at(0, j) = te_row[j] + pe_row[j];
        auto x = g.constant(std::move(row));
        for (size_t bi = 0; bi < blocks.size(); ++bi) {
            const Block& blk = blocks[bi];
            auto& bc = cache.blocks[bi];
            // new self K/V row for this position
            auto new_k = g.linear(x, g.constant(blk.sa_wk.value), g.constant(blk.sa_bk.value));
            auto new_v = g.linear(x, g.constant(blk.sa_wv.value), g.constant(blk.sa_bv.value));
            std::copy_n(g.val(new_k).row(0), h, bc.self_k.row(pos));
            std::copy_n(g.val(new_v).row(0), h, bc.self_v.row(pos));
            Tensor<T> k_all({pos + 1, h}), v_all({pos + 1, h});
            std::copy_n(bc.self_k.data.data(), size_t(pos + 1) * size_t(h), k_all.data.data());
            std::copy_n(bc.self_v.data.data(), size_t(pos + 1) * size_t(h), v_all.data.data());
            x = block_graph_cached(g, blk, x, g.constant(std::move(k_all)),
                                   g.constant(std::move(v_all)), g.constant(bc.text_k),
                                   g.constant(bc.text_v), g.constant(bc.spk_k),
                                   g.constant(bc.spk_v), pos);
        }
        auto logits = g.linear(x, g.constant(head_w.value), g.constant(head_b.value));
        ++cache.len;
        const Tensor<T>& lv = g.val(logits);
        return std::vector<T>(lv.data.begin(), lv.data.end());
    }

    // SOS-initialized autoregressive generation. Stops at EOS or after
    // max_audio_tokens; the returned sequence contains audio tokens only.
    TokenSequence generate(const Tensor<T>& x_te, const Tensor<T>& x_se,
                           const SamplingConfig& sampling, uint64_t seed) const {
        Rng rng(seed);
        KvCache cache = start_session(x_te, x_se);
        TokenSequence out;
        int token = kSosToken;
        while (int(out.tokens.size()) < cfg.max_audio_tokens) {
            std::vector<T> logits = step(cache, token);
            int next = sample_token(logits, sampling, rng);
            if (next == kEosToken) break;
            out.tokens.push_back(next);
            token = next;
        }
        return out;
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        for (auto* p : const_cast<CodecLm*>(this)->trainable_params()) fn(*p);
    }

private:
    void check_inputs(int t, const Tensor<T>& x_te, const Tensor<T>& x_se) const {
        if (t < 1 || t > cfg.max_positions())
            throw DataError("LM forward: sequence length " + std::to_string(t) +
                            " out of range (max " + std::to_string(cfg.max_positions()) + ")");
        if (x_te.rank() != 2 || x_te.dim(1) != cfg.hidden_dim)
            throw DataError("LM forward: text encoding width must equal hidden_dim");
        if (x_te.dim(0) < 1 || x_te.dim(0) > cfg.max_text_tokens)
            throw DataError("LM forward: text length out of range");
        if (x_se.rank() != 2 || x_se.dim(1) != cfg.d_spk)
            throw DataError("LM forward: speaker embedding width must equal d_spk");
        if (x_se.dim(0) < 1) throw DataError("LM forward: empty speaker embedding");
    }

    // Shared block body; full path computes self K/V from the whole stream,
    // cached path receives them precomputed.
    typename Graph<T>::NodeId block_graph(Graph<T>& g, const Block& blk,
                                          typename Graph<T>::NodeId x,
                                          typename Graph<T>::NodeId te,
                                          typename Graph<T>::NodeId se, bool trainable,
                                          int q_offset) const {
        auto k = g.linear(x, param_or_const(g, blk.sa_wk, trainable),
                          param_or_const(g, blk.sa_bk, trainable));
        auto v = g.linear(x, param_or_const(g, blk.sa_wv, trainable),
                          param_or_const(g, blk.sa_bv, trainable));
        auto tk = g.linear(te, param_or_const(g, blk.ct_wk, trainable),
                           param_or_const(g, blk.ct_bk, trainable));
        auto tv = g.linear(te, param_or_const(g, blk.ct_wv, trainable),
                           param_or_const(g, blk.ct_bv, trainable));
        auto sk = g.linear(se, param_or_const(g, blk.cs_wk, trainable),
                           param_or_const(g, blk.cs_bk, trainable));
        auto sv = g.linear(se, param_or_const(g, blk.cs_wv, trainable),
                           param_or_const(g, blk.cs_bv, trainable));
        return block_core(g, blk, x, k, v, tk, tv, sk, sv, trainable, q_offset);
    }

    typename Graph<T>::NodeId block_graph_cached(Graph<T>& g, const Block& blk,
                                                 typename Graph<T>::NodeId x,
                                                 typename Graph<T>::NodeId k,
                                                 typename Graph<T>::NodeId v,
                                                 typename Graph<T>::NodeId tk,
                                                 typename Graph<T>::NodeId tv,
                                                 typename Graph<T>::NodeId sk,
                                                 typename Graph<T>::NodeId sv,
                                                 int q_offset) const {
        return block_core(g, blk, x, k, v, tk, tv, sk, sv, false, q_offset);
    }

    typename Graph<T>::NodeId block_core(Graph<T>& g, const Block& blk,
                                         typename Graph<T>::NodeId x,
                                         typename Graph<T>::NodeId k,
                                         typename Graph<T>::NodeId v,
                                         typename Graph<T>::NodeId tk,
                                         typename Graph<T>::NodeId tv,
                                         typename Graph<T>::NodeId sk,
                                         typename Graph<T>::NodeId sv, bool trainable,
                                         int q_offset) const {
        // (a) masked self-attention
        auto q = g.linear(x, param_or_const(g, blk.sa_wq, trainable),
                          param_or_const(g, blk.sa_bq, trainable));
        auto a = g.attention(q, k, v, cfg.n_heads, /*causal=*/true, q_offset);
        a = g.linear(a, param_or_const(g, blk.sa_wo, trainable),
                     param_or_const(g, blk.sa_bo, trainable));
        // (b) layer norm, residual from the block input
        x = g.layer_norm(g.add(x, a), param_or_const(g, blk.ln1_g, trainable),
                         param_or_const(g, blk.ln1_b, trainable));
        // (c) cross-attention on text
        q = g.linear(x, param_or_const(g, blk.ct_wq, trainable),
                     param_or_const(g, blk.ct_bq, trainable));
        auto c = g.attention(q, tk, tv, cfg.n_heads, /*causal=*/false);
        c = g.linear(c, param_or_const(g, blk.ct_wo, trainable),
                     param_or_const(g, blk.ct_bo, trainable));
        // (d) layer norm + residual
        x = g.layer_norm(g.add(x, c), param_or_const(g, blk.ln2_g, trainable),
                         param_or_const(g, blk.ln2_b, trainable));
        // (e) cross-attention on speaker frames, residual from preceding output
        q = g.linear(x, param_or_const(g, blk.cs_wq, trainable),
                     param_or_const(g, blk.cs_bq, trainable));
        auto s = g.attention(q, sk, sv, cfg.n_heads, /*causal=*/false);
        s = g.linear(s, param_or_const(g, blk.cs_wo, trainable),
                     param_or_const(g, blk.cs_bo, trainable));
        x = g.layer_norm(g.add(x, s), param_or_const(g, blk.ln3_g, trainable),
                         param_or_const(g, blk.ln3_b, trainable));
        // (f) feed-forward with GeLU, then layer norm
        auto f = g.gelu(g.linear(x, param_or_const(g, blk.ff_w1, trainable),
                                 param_or_const(g, blk.ff_b1, trainable)));
        f = g.linear(f, param_or_const(g, blk.ff_w2, trainable),
                     param_or_const(g, blk.ff_b2, trainable));
        return g.layer_norm(g.add(x, f), param_or_const(g, blk.ln4_g, trainable),
                            param_or_const(g, blk.ln4_b, trainable));
    }

    int sample_token(std::vector<T>& logits, const SamplingConfig& sampling, Rng& rng) const {
        // generation never emits SOS/PAD
        logits[size_t(kSosToken)] = -std::numeric_limits<T>::infinity();
        logits[size_t(kPadToken)] = -std::numeric_limits<T>::infinity();
        if (sampling.kind == SamplingConfig::kGreedy) {
            int best = 0;
            for (int i = 1; i < int(logits.size()); ++i)
                if (logits[size_t(i)] > logits[size_t(best)]) best = i;
            return best;
        }
        const T inv_temp = T(1.0 / sampling.temperature);
        std::vector<std::pair<T, int>> scored;
        scored.reserve(logits.size());
        for (int i = 0; i < int(logits.size()); ++i)
            if (std::isfinite(double(logits[size_t(i)])))
                scored.push_back({logits[size_t(i)] * inv_temp, i});
        int k = std::min<int>(sampling.k, int(scored.size()));
        std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                          [](const auto& a, const auto& b) {
                              return a.first > b.first || (a.first == b.first && a.second < b.second);
                          });
        scored.resize(size_t(k));
        T mx = scored[0].first;
        double sum = 0.0;
        std::vector<double> probs(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
            probs[size_t(i)] = std::exp(double(scored[size_t(i)].first - mx));
            sum += probs[size_t(i)];
        }
        double u = rng.uniform() * sum;
        double acc = 0.0;
        for (int i = 0; i < k; ++i) {
            acc += probs[size_t(i)];
            if (u < acc) return scored[size_t(i)].second;
        }
        return scored[size_t(k - 1)].second;
    }
};

} // namespace engen
