#include "engen/text_frontend.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace engen {

namespace {

BpeModel base_model() {
    BpeModel m;
    m.symbols.resize(256);
    for (int b = 0; b < 256; ++b) m.symbols[size_t(b)] = std::string(1, char(uint8_t(b)));
    return m;
}

void merge_in_place(std::vector<int>& seq, int left, int right, int new_id) {
    size_t w = 0;
    for (size_t r = 0; r < seq.size();) {
        if (r + 1 < seq.size() && seq[r] == left && seq[r + 1] == right) {
            seq[w++] = new_id;
            r += 2;
        } else {
            seq[w++] = seq[r++];
        }
    }
    seq.resize(w);
}

} // namespace

BpeModel bpe_train(const std::vector<std::string>& corpus, int vocab_size) {
    if (corpus.empty()) throw DataError("bpe_train: empty corpus");
    if (vocab_size < 256) throw UsageError("bpe_train: vocab_size must be >= 256");
    BpeModel m = base_model();
    std::vector<std::vector<int>> seqs;
    seqs.reserve(corpus.size());
    for (const std::string& s : corpus) {
        std::vector<int> seq;
        seq.reserve(s.size());
        for (unsigned char c : s) seq.push_back(int(c));
        seqs.push_back(std::move(seq));
    }
    while (m.vocab_size() < vocab_size) {
        std::map<std::pair<int, int>, int64_t> counts;
        for (const auto& seq : seqs)
            for (size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];
        if (counts.empty()) break;
        std::pair<int, int> best{-1, -1};
        int64_t best_count = 0;
        for (const auto& [pair, count] : counts) {
            bool take = count > best_count;
            if (count == best_count && best.first >= 0) {
                // lexicographic tie-break on the symbols' byte strings
                const auto lhs =
                    std::make_pair(m.symbols[size_t(pair.first)], m.symbols[size_t(pair.second)]);
                const auto rhs =
                    std::make_pair(m.symbols[size_t(best.first)], m.symbols[size_t(best.second)]);
                take = lhs < rhs;
            }
            if (take) {
                best = pair;
                best_count = count;
            }
        }
        if (best_count < 2) break; // nothing left worth merging
        int new_id = m.vocab_size();
        m.merges.push_back(best);
        m.symbols.push_back(m.symbols[size_t(best.first)] + m.symbols[size_t(best.second)]);
        for (auto& seq : seqs) merge_in_place(seq, best.first, best.second, new_id);
    }
    return m;
}

std::vector<int> bpe_encode(const BpeModel& m, const std::string& text) {
    std::vector<int> seq;
    seq.reserve(text.size());
    for (unsigned char c : text) seq.push_back(int(c));
    for (size_t i = 0; i < m.merges.size(); ++i)
        merge_in_place(seq, m.merges[i].first, m.merges[i].second, 256 + int(i));
    if (int(seq.size()) > kMaxTextTokens)
        throw DataError("bpe_encode: text exceeds " + std::to_string(kMaxTextTokens) +
                        " tokens; chunk the input");
    return seq;
}

std::string bpe_decode(const BpeModel& m, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= m.vocab_size())
            throw DataError("bpe_decode: id " + std::to_string(id) + " out of range");
        out += m.symbols[size_t(id)];
    }
    return out;
}

void bpe_save(const BpeModel& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ModelError("cannot write bpe model: " + path);
    f << "# engen bpe v1: merges as 'left right' symbol ids, merged id implicit by order\n";
    f << "vocab_size " << m.vocab_size() << "\n";
    for (const auto& [l, r] : m.merges) f << l << " " << r << "\n";
}

BpeModel bpe_load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ModelError("cannot open bpe model: " + path);
    BpeModel m = base_model();
    std::string line;
    int declared = -1;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string first;
        ss >> first;
        if (first == "vocab_size") {
            ss >> declared;
            continue;
        }
        int l = std::stoi(first), r = 0;
        if (!(ss >> r)) throw ModelError("malformed bpe merge line: " + line);
        if (l < 0 || l >= m.vocab_size() || r < 0 || r >= m.vocab_size())
            throw ModelError("bpe merge references unknown symbol: " + line);
        m.merges.emplace_back(l, r);
        m.symbols.push_back(m.symbols[size_t(l)] + m.symbols[size_t(r)]);
    }
    if (declared >= 0 && declared != m.vocab_size())
        throw ModelError("bpe vocab_size mismatch: header says " + std::to_string(declared) +
                         ", file defines " + std::to_string(m.vocab_size()));
    return m;
}

} // namespace engen
