#pragma once

#include <string>
#include <vector>

#include "engen/autodiff.hpp"
#include "engen/common.hpp"
#include "engen/tensor.hpp"

namespace engen {

constexpr int kMaxTextTokens = 1024;
constexpr uint64_t kTextEncoderSeed = 0xE27;

// Byte-level BPE. Symbols 0-255 are raw bytes; merge i defines symbol 256+i.
struct BpeModel {
    std::vector<std::pair<int, int>> merges; // (left symbol id, right symbol id)
    std::vector<std::string> symbols;        // id -> byte string

    int vocab_size() const { return int(symbols.size()); }
};

// Greedy most-frequent-pair training; ties broken by the lexicographically
// smaller (left bytes, right bytes) pair. Stops early when no pair repeats.
BpeModel bpe_train(const std::vector<std::string>& corpus, int vocab_size);

// Applies merges in training order. Throws DataError when the result exceeds
// kMaxTextTokens.
std::vector<int> bpe_encode(const BpeModel& m, const std::string& text);

std::string bpe_decode(const BpeModel& m, const std::vector<int>& ids);

void bpe_save(const BpeModel& m, const std::string& path);
BpeModel bpe_load(const std::string& path);

// Frozen text-conditioning encoder: token embedding + sinusoidal positions +
// 2 bidirectional self-attention blocks. Weights are derived from a fixed
// seed and never updated; d_model matches the LM hidden size.
struct TextEncoderConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_heads = 4;
    int n_blocks = 2;
};

template <typename T>
struct TextEncoder {
    TextEncoderConfig cfg;
    Tensor<T> tok_emb; // [vocab, d]
    struct Block {
        Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor<T> ln1_g, ln1_b;
        Tensor<T> w1, b1, w2, b2;
        Tensor<T> ln2_g, ln2_b;
    };
    std::vector<Block> blocks;

    static TextEncoder make(const TextEncoderConfig& cfg, uint64_t seed = kTextEncoderSeed) {
        if (cfg.d_model % cfg.n_heads != 0)
            throw ModelError("text encoder d_model must be divisible by n_heads");
        Rng rng(seed);
        const int d = cfg.d_model;
        const T std_dev = T(0.02);
        TextEncoder enc;
        enc.cfg = cfg;
        enc.tok_emb = Tensor<T>::randn({cfg.vocab_size, d}, rng, std_dev);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            Block blk;
            blk.wq = Tensor<T>::randn({d, d}, rng, std_dev);
            blk.bq = Tensor<T>::zeros({d});
            blk.wk = Tensor<T>::randn({d, d}, rng, std_dev);
            blk.bk = Tensor<T>::zeros({d});
            blk.wv = Tensor<T>::randn({d, d}, rng, std_dev);
            blk.bv = Tensor<T>::zeros({d});
            blk.wo = Tensor<T>::randn({d, d}, rng, std_dev);
            blk.bo = Tensor<T>::zeros({d});
            blk.ln1_g = Tensor<T>::full({d}, T(1));
            blk.ln1_b = Tensor<T>::zeros({d});
            blk.w1 = Tensor<T>::randn({d, 4 * d}, rng, std_dev);
            blk.b1 = Tensor<T>::zeros({4 * d});
            blk.w2 = Tensor<T>::randn({4 * d, d}, rng, std_dev);
            blk.b2 = Tensor<T>::zeros({d});
            blk.ln2_g = Tensor<T>::full({d}, T(1));
            blk.ln2_b = Tensor<T>::zeros({d});
            enc.blocks.push_back(std::move(blk));
        }
        return enc;
    }

    // [len x d_model]; purely functional, no gradients.
    Tensor<T> encode(const std::vector<int>& ids) const {
        if (ids.empty() || int(ids.size()) > kMaxTextTokens)
            throw DataError("encode_text: need 1.." + std::to_string(kMaxTextTokens) + " tokens");
        for (int id : ids)
            if (id < 0 || id >= cfg.vocab_size) throw DataError("encode_text: id out of range");
        const int n = int(ids.size()), d = cfg.d_model;
        Graph<T> g(false);
        Tensor<T> pe({n, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                double angle = i / std::pow(10000.0, double(2 * (j / 2)) / d);
                pe.at(i, j) = T(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
            }
        auto x = g.add_const(g.gather_rows(g.constant(tok_emb), ids), pe);
        for (const Block& blk : blocks) {
            auto q = g.linear(x, g.constant(blk.wq), g.constant(blk.bq));
            auto k = g.linear(x, g.constant(blk.wk), g.constant(blk.bk));
            auto v = g.linear(x, g.constant(blk.wv), g.constant(blk.bv));
            auto a = g.attention(q, k, v, cfg.n_heads, /*causal=*/false);
            a = g.linear(a, g.constant(blk.wo), g.constant(blk.bo));
            x = g.layer_norm(g.add(x, a), g.constant(blk.ln1_g), g.constant(blk.ln1_b));
            auto h = g.gelu(g.linear(x, g.constant(blk.w1), g.constant(blk.b1)));
            auto f = g.linear(h, g.constant(blk.w2), g.constant(blk.b2));
            x = g.layer_norm(g.add(x, f), g.constant(blk.ln2_g), g.constant(blk.ln2_b));
        }
        return g.val(x);
    }

    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        fn("text.tok_emb", tok_emb);
        for (size_t b = 0; b < blocks.size(); ++b) {
            const Block& blk = blocks[b];
            std::string p = "text.blk" + std::to_string(b) + ".";
            fn(p + "wq", blk.wq);
            fn(p + "bq", blk.bq);
            fn(p + "wk", blk.wk);
            fn(p + "bk", blk.bk);
            fn(p + "wv", blk.wv);
            fn(p + "bv", blk.bv);
            fn(p + "wo", blk.wo);
            fn(p + "bo", blk.bo);
            fn(p + "ln1_g", blk.ln1_g);
            fn(p + "ln1_b", blk.ln1_b);
            fn(p + "w1", blk.w1);
            fn(p + "b1", blk.b1);
            fn(p + "w2", blk.w2);
            fn(p + "b2", blk.b2);
            fn(p + "ln2_g", blk.ln2_g);
            fn(p + "ln2_b", blk.ln2_b);
        }
    }
};

} // namespace engen
