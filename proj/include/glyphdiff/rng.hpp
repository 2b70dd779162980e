#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// xoshiro256++ with splitmix64 seeding. Implementation-defined stdlib
// distributions are avoided so that streams are stable across compilers and
// the full generator state (including the cached Box-Muller spare) can be
// serialized into checkpoints.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
        has_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0,1) with 53-bit resolution
    double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n) {
        // rejection sampling to avoid modulo bias
        const uint64_t un = (uint64_t)n;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return (int64_t)(v % un);
    }

    // standard normal via Box-Muller; spare value cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename S>
    void fill_normal(TensorT<S>& t, double stddev = 1.0) {
        for (auto& v : t.data) v = (S)(normal() * stddev);
    }

    template <typename S>
    void fill_uniform(TensorT<S>& t, double lo, double hi) {
        for (auto& v : t.data) v = (S)uniform(lo, hi);
    }

    // 6x8 bytes: 4 state words, spare flag, spare bits
    std::vector<uint8_t> serialize() const {
        std::vector<uint8_t> out(48);
        std::memcpy(out.data(), state_.data(), 32);
        uint64_t flag = has_spare_ ? 1 : 0;
        std::memcpy(out.data() + 32, &flag, 8);
        uint64_t bits;
        std::memcpy(&bits, &spare_, 8);
        std::memcpy(out.data() + 40, &bits, 8);
        return out;
    }

    void deserialize(const std::vector<uint8_t>& bytes) {
        if (bytes.size() != 48) throw std::invalid_argument("rng state must be 48 bytes");
        std::memcpy(state_.data(), bytes.data(), 32);
        uint64_t flag;
        std::memcpy(&flag, bytes.data() + 32, 8);
        has_spare_ = flag != 0;
        std::memcpy(&spare_, bytes.data() + 40, 8);
    }

    // independent child stream (for per-image seeds in parallel generation)
    Rng fork(uint64_t salt) const {
        uint64_t x = state_[0] ^ (salt * 0x9E3779B97F4A7C15ull) ^ state_[3];
        return Rng(splitmix64(x));
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9E3779B97F4A7C15ull;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace glyphdiff
