#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nvs/core/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

namespace nvs {

// Portable named-array archive (.nva): little-endian binary, one entry per
// named float32 tensor.
void save_archive(const std::string& path, const std::map<std::string, Tensor>& arrays);
std::map<std::string, Tensor> load_archive(const std::string& path);

// FNV-1a 64 over a file's bytes, hex string. Used as the checkpoint
// content hash and for dataset checksums.
std::string file_hash_hex(const std::string& path);
uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 14695981039346656037ull);

// Checkpoint = weights archive + JSON manifest next to it.
struct CheckpointManifest {
    std::string kind;            // "srt" | "diffusion" | "field"
    nlohmann::json hyperparams;  // architecture configuration
    std::string weights_file;    // relative archive filename
    std::string content_hash;    // hash of the archive
    uint64_t seed = 0;
};

void save_checkpoint(const std::string& dir, const std::string& kind,
                     const nlohmann::json& hyperparams, uint64_t seed,
                     const std::map<std::string, Tensor>& arrays);
CheckpointManifest load_manifest(const std::string& dir);
std::map<std::string, Tensor> load_checkpoint_arrays(const std::string& dir,
                                                     const CheckpointManifest& m);

}  // namespace nvs
