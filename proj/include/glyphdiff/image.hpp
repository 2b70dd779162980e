#pragma once

#include <string>

#include "glyphdiff/geometry.hpp"
#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// RGB image, channels-last (H,W,3), values in [0,1].
struct Image {
    int height = 0, width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w) : height(h), width(w), data((size_t)h * w * 3, 0.0f) {}

    float* px(int y, int x) { return data.data() + ((int64_t)y * width + x) * 3; }
    const float* px(int y, int x) const { return data.data() + ((int64_t)y * width + x) * 3; }

    bool operator==(const Image& o) const {
        return height == o.height && width == o.width && data == o.data;
    }
};

// Single-channel mask/alpha plane, (H,W) in [0,1].
struct Plane {
    int height = 0, width = 0;
    std::vector<float> data;

    Plane() = default;
    Plane(int h, int w) : height(h), width(w), data((size_t)h * w, 0.0f) {}

    float& at(int y, int x) { return data[(size_t)((int64_t)y * width + x)]; }
    float at(int y, int x) const { return data[(size_t)((int64_t)y * width + x)]; }
};

void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// bilinear resize with half-pixel sample centers
Image resize_bilinear(const Image& src, int oh, int ow);
Plane resize_bilinear(const Plane& src, int oh, int ow);

// crop a rectangle (clamped to bounds must hold: rect inside image)
Image crop(const Image& src, const RectI& r);
Plane crop(const Plane& src, const RectI& r);

// image <-> (1,H,W,3) tensor bridges
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

}  // namespace glyphdiff
