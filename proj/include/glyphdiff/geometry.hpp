#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glyphdiff {

// Integer rectangle, max-exclusive: pixels x0..x1-1, y0..y1-1.
struct RectI {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    int64_t area() const { return (int64_t)width() * height(); }
    bool empty() const { return width() <= 0 || height() <= 0; }

    bool contains(const RectI& o) const {
        return x0 <= o.x0 && y0 <= o.y0 && x1 >= o.x1 && y1 >= o.y1;
    }
    bool operator==(const RectI& o) const {
        return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
    }
};

inline RectI rect_intersection(const RectI& a, const RectI& b) {
    RectI r{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
    if (r.empty()) return RectI{0, 0, 0, 0};
    return r;
}

inline double rect_iou(const RectI& a, const RectI& b) {
    if (a.empty() || b.empty()) return 0.0;
    const RectI i = rect_intersection(a, b);
    const double inter = (double)i.area();
    const double uni = (double)a.area() + (double)b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct Point2 {
    double x = 0.0, y = 0.0;
};

inline Point2 rotate_about(const Point2& p, const Point2& center, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = p.x - center.x, dy = p.y - center.y;
    return {center.x + c * dx - s * dy, center.y + s * dx + c * dy};
}

}  // namespace glyphdiff
