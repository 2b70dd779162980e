#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

struct Fnv1a64 {
    uint64_t h = 0xCBF29CE484222325ull;

    void update(const void* bytes, size_t n) {
        const uint8_t* p = (const uint8_t*)bytes;
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001B3ull;
        }
    }

    void update_str(const std::string& s) { update(s.data(), s.size()); }

    template <typename S>
    void update_tensor(const TensorT<S>& t) {
        for (int d : t.shape) update(&d, sizeof(d));
        update(t.data.data(), t.data.size() * sizeof(S));
    }

    uint64_t digest() const { return h; }
};

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return std::string(buf);
}

}  // namespace glyphdiff
