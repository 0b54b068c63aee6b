#pragma once

// Binary tensor container: little-endian, "ENGN" magic, u32 version, u32
// tensor count, then per tensor (u32 name_len, name, u32 rank, u32 dims[],
// float32 data). Shared by codec, LM and vocoder checkpoints.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "engen/autodiff.hpp"
#include "engen/tensor.hpp"

namespace engen {

constexpr uint32_t kCheckpointVersion = 1;

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors);

std::map<std::string, Tensor<float>> load_tensors(const std::string& path);

// key=value sidecar configs
void save_kv(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv);
std::map<std::string, std::string> load_kv(const std::string& path);

// FNV-1a over the raw float bytes; used by the frozenness audit.
uint64_t digest_bytes(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);

template <typename T>
uint64_t digest_tensor(const Tensor<T>& t, uint64_t seed = 0xcbf29ce484222325ull) {
    return digest_bytes(t.data.data(), t.data.size() * sizeof(T), seed);
}

// Works for any model exposing for_each_param(fn(const Param<float>&)).
template <typename M>
void save_model(const std::string& path, const M& model) {
    std::vector<std::pair<std::string, const Tensor<float>*>> ts;
    model.for_each_param([&](const Param<float>& p) { ts.push_back({p.name, &p.value}); });
    save_tensors(path, ts);
}

template <typename M>
void load_model(const std::string& path, M& model) {
    auto ts = load_tensors(path);
    size_t used = 0;
    model.for_each_param([&](const Param<float>& p) {
        auto it = ts.find(p.name);
        if (it == ts.end()) throw ModelError("checkpoint missing tensor " + p.name + ": " + path);
        if (it->second.shape != p.value.shape)
            throw ModelError("checkpoint shape mismatch for " + p.name + ": " + path);
        const_cast<Param<float>&>(p).value = it->second;
        ++used;
    });
    if (used != ts.size())
        throw ModelError("checkpoint contains tensors this model does not expect: " + path);
}

} // namespace engen
