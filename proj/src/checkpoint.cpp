#include "engen/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "engen/common.hpp"

namespace engen {

namespace {

void wr_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t rd_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw ModelError("checkpoint truncated");
    return v;
}

} // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ModelError("cannot write checkpoint: " + path);
    f.write("ENGN", 4);
    wr_u32(f, kCheckpointVersion);
    wr_u32(f, uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) {
        wr_u32(f, uint32_t(name.size()));
        f.write(name.data(), std::streamsize(name.size()));
        wr_u32(f, uint32_t(t->shape.size()));
        for (int d : t->shape) wr_u32(f, uint32_t(d));
        f.write(reinterpret_cast<const char*>(t->data.data()),
                std::streamsize(t->data.size() * sizeof(float)));
    }
    if (!f) throw ModelError("short write on checkpoint: " + path);
}

std::map<std::string, Tensor<float>> load_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ModelError("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "ENGN", 4) != 0)
        throw ModelError("bad checkpoint magic: " + path);
    uint32_t version = rd_u32(f);
    if (version != kCheckpointVersion)
        throw ModelError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    uint32_t count = rd_u32(f);
    std::map<std::string, Tensor<float>> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = rd_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint32_t rank = rd_u32(f);
        std::vector<int> shape(rank);
        for (uint32_t r = 0; r < rank; ++r) shape[r] = int(rd_u32(f));
        Tensor<float> t(shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               std::streamsize(t.data.size() * sizeof(float)));
        if (!f) throw ModelError("checkpoint truncated in tensor " + name + ": " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

void save_kv(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream f(path);
    if (!f) throw ModelError("cannot write config: " + path);
    for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
}

std::map<std::string, std::string> load_kv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ModelError("cannot open config: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

uint64_t digest_bytes(const void* data, size_t n, uint64_t seed) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace engen
