#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// Named-tensor archive: float32 tensors plus opaque byte blobs (RNG state),
// stored little-endian with a trailing content checksum. Metadata lives in a
// JSON sidecar at <path>.json managed by callers.
struct NamedTensors {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::vector<uint8_t>> blobs;

    void put(const std::string& name, Tensor t) { tensors[name] = std::move(t); }

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }

    void save(const std::string& path) const;
    static NamedTensors load(const std::string& path);
};

std::string json_sidecar_path(const std::string& archive_path);

}  // namespace glyphdiff
