#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace glyphdiff {

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

// Dense tensor, contiguous, last dimension fastest. Feature maps use
// channels-last (N,H,W,C); token sets (N,K,D); scalars shape {1}.
template <typename S>
struct TensorT {
    std::vector<int> shape;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> sh) : shape(std::move(sh)), data(shape_numel(shape), S(0)) {}
    TensorT(std::vector<int> sh, S fill) : shape(std::move(sh)), data(shape_numel(shape), fill) {}
    TensorT(std::vector<int> sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
        if ((int64_t)data.size() != shape_numel(shape))
            throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return (int64_t)data.size(); }
    int dim(int i) const { return shape[(size_t)i]; }
    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    S& operator[](int64_t i) { return data[(size_t)i]; }
    const S& operator[](int64_t i) const { return data[(size_t)i]; }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = (U)data[i];
        return out;
    }

    static TensorT zeros(std::vector<int> sh) { return TensorT(std::move(sh)); }
    static TensorT full(std::vector<int> sh, S v) { return TensorT(std::move(sh), v); }
    static TensorT scalar(S v) { return TensorT({1}, std::vector<S>{v}); }
};

using Tensor = TensorT<float>;

template <typename S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

template <typename S>
S max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "max_abs_diff");
    S m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        S d = a[i] - b[i];
        if (d < 0) d = -d;
        if (d > m) m = d;
    }
    return m;
}

}  // namespace glyphdiff
