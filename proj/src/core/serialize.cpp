#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvs/core/errors.hpp"
#include "nvs/core/serialize.hpp"

namespace nvs {

namespace {

constexpr char kMagic[8] = {'N', 'V', 'A', 'R', 'C', 'H', '1', '\n'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("archive truncated");
    return v;
}

}  // namespace

void save_archive(const std::string& path, const std::map<std::string, Tensor>& arrays) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(os, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) {
        write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
        for (int64_t d : t.shape()) write_pod<int64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(sizeof(float) * t.numel()));
    }
    if (!os) throw IoError("write failed for " + path);
}

std::map<std::string, Tensor> load_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a named-array archive: " + path);
    const uint32_t count = read_pod<uint32_t>(is);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t ndim = read_pod<uint32_t>(is);
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = read_pod<int64_t>(is);
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(float) * t.numel()));
        if (!is) throw IoError("archive truncated: " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

uint64_t fnv1a(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    uint64_t h = 14695981039346656037ull;
    std::vector<char> buf(1 << 16);
    while (is) {
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto got = is.gcount();
        if (got > 0) h = fnv1a(buf.data(), static_cast<size_t>(got), h);
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return std::string(hex);
}

void save_checkpoint(const std::string& dir, const std::string& kind,
                     const nlohmann::json& hyperparams, uint64_t seed,
                     const std::map<std::string, Tensor>& arrays) {
    std::filesystem::create_directories(dir);
    const std::string weights = "weights.nva";
    save_archive(dir + "/" + weights, arrays);
    nlohmann::json m;
    m["kind"] = kind;
    m["hyperparams"] = hyperparams;
    m["weights_file"] = weights;
    m["content_hash"] = file_hash_hex(dir + "/" + weights);
    m["seed"] = seed;
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << m.dump(2) << "\n";
}

CheckpointManifest load_manifest(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw IoError("no checkpoint manifest in " + dir);
    nlohmann::json m = nlohmann::json::parse(is);
    CheckpointManifest out;
    out.kind = m.at("kind").get<std::string>();
    out.hyperparams = m.at("hyperparams");
    out.weights_file = m.at("weights_file").get<std::string>();
    out.content_hash = m.at("content_hash").get<std::string>();
    out.seed = m.value("seed", 0ull);
    return out;
}

std::map<std::string, Tensor> load_checkpoint_arrays(const std::string& dir,
                                                     const CheckpointManifest& m) {
    const std::string path = dir + "/" + m.weights_file;
    if (file_hash_hex(path) != m.content_hash)
        throw IoError("checkpoint hash mismatch: " + path);
    return load_archive(path);
}

}  // namespace nvs
