#include "glyphdiff/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace glyphdiff {

namespace {
struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

uint8_t to_u8(float v) {
    const float c = std::min(std::max(v, 0.0f), 1.0f);
    return (uint8_t)std::lround(c * 255.0f);
}
}  // namespace

void write_png(const std::string& path, const Image& img) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, (png_uint_32)img.width, (png_uint_32)img.height, 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row((size_t)img.width * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const float* p = img.px(y, x);
            row[(size_t)x * 3 + 0] = to_u8(p[0]);
            row[(size_t)x * 3 + 1] = to_u8(p[1]);
            row[(size_t)x * 3 + 2] = to_u8(p[2]);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open for reading: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int h = (int)png_get_image_height(png, info);
    const int w = (int)png_get_image_width(png, info);
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unexpected channel count in " + path);
    }

    Image img(h, w);
    std::vector<uint8_t> row((size_t)w * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            float* p = img.px(y, x);
            p[0] = row[(size_t)x * 3 + 0] / 255.0f;
            p[1] = row[(size_t)x * 3 + 1] / 255.0f;
            p[2] = row[(size_t)x * 3 + 2] / 255.0f;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

namespace {
template <typename GetFn, typename SetFn>
void resize_core(int sh, int sw, int oh, int ow, int ch, const GetFn& get, const SetFn& set) {
    const double sy = (double)sh / oh, sx = (double)sw / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), (double)sh - 1.0);
        const int y0 = (int)fy, y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < ow; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), (double)sw - 1.0);
            const int x0 = (int)fx, x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - x0;
            for (int c = 0; c < ch; ++c) {
                const double top = get(y0, x0, c) + wx * (get(y0, x1, c) - get(y0, x0, c));
                const double bot = get(y1, x0, c) + wx * (get(y1, x1, c) - get(y1, x0, c));
                set(oy, ox, c, (float)(top + wy * (bot - top)));
            }
        }
    }
}
}  // namespace

Image resize_bilinear(const Image& src, int oh, int ow) {
    if (src.height == oh && src.width == ow) return src;
    Image out(oh, ow);
    resize_core(src.height, src.width, oh, ow, 3,
                [&](int y, int x, int c) { return (double)src.px(y, x)[c]; },
                [&](int y, int x, int c, float v) { out.px(y, x)[c] = v; });
    return out;
}

Plane resize_bilinear(const Plane& src, int oh, int ow) {
    if (src.height == oh && src.width == ow) return src;
    Plane out(oh, ow);
    resize_core(src.height, src.width, oh, ow, 1,
                [&](int y, int x, int) { return (double)src.at(y, x); },
                [&](int y, int x, int, float v) { out.at(y, x) = v; });
    return out;
}

Image crop(const Image& src, const RectI& r) {
    if (r.empty() || r.x0 < 0 || r.y0 < 0 || r.x1 > src.width || r.y1 > src.height)
        throw std::invalid_argument("crop: rect outside image");
    Image out(r.height(), r.width());
    for (int y = 0; y < r.height(); ++y)
        std::copy_n(src.px(r.y0 + y, r.x0), (size_t)r.width() * 3, out.px(y, 0));
    return out;
}

Plane crop(const Plane& src, const RectI& r) {
    if (r.empty() || r.x0 < 0 || r.y0 < 0 || r.x1 > src.width || r.y1 > src.height)
        throw std::invalid_argument("crop: rect outside plane");
    Plane out(r.height(), r.width());
    for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) out.at(y, x) = src.at(r.y0 + y, r.x0 + x);
    return out;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({1, img.height, img.width, 3});
    std::copy(img.data.begin(), img.data.end(), t.data.begin());
    return t;
}

Image tensor_to_image(const Tensor& t) {
    if (t.shape.size() != 4 || t.dim(0) != 1 || t.dim(3) != 3)
        throw std::invalid_argument("tensor_to_image expects (1,H,W,3), got " + shape_str(t.shape));
    Image img(t.dim(1), t.dim(2));
    std::copy(t.data.begin(), t.data.end(), img.data.begin());
    return img;
}

}  // namespace glyphdiff
