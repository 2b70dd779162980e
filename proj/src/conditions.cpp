#include "glyphdiff/conditions.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace glyphdiff {

RectI square_bbox(const RectI& bbox, int image_size) {
    if (bbox.empty()) throw std::invalid_argument("square_bbox: degenerate bbox");
    if (bbox.x0 < 0 || bbox.y0 < 0 || bbox.x1 > image_size || bbox.y1 > image_size)
        throw std::invalid_argument("square_bbox: bbox outside image");
    const int side = std::max(bbox.width(), bbox.height());
    if (side >= image_size) return RectI{0, 0, image_size, image_size};

    const double cx = (bbox.x0 + bbox.x1) / 2.0;
    const double cy = (bbox.y0 + bbox.y1) / 2.0;
    int x0 = (int)std::floor(cx - side / 2.0 + 0.5);
    int y0 = (int)std::floor(cy - side / 2.0 + 0.5);
    // translate (never shrink) to fit
    x0 = std::min(std::max(x0, 0), image_size - side);
    y0 = std::min(std::max(y0, 0), image_size - side);
    return RectI{x0, y0, x0 + side, y0 + side};
}

RectI scale_rect_outward(const RectI& px_rect, int image_size, int grid_size) {
    if (px_rect.empty()) throw std::invalid_argument("scale_rect_outward: empty rect");
    const double f = (double)grid_size / image_size;
    RectI r;
    r.x0 = (int)std::floor(px_rect.x0 * f + 1e-9);
    r.y0 = (int)std::floor(px_rect.y0 * f + 1e-9);
    r.x1 = (int)std::ceil(px_rect.x1 * f - 1e-9);
    r.y1 = (int)std::ceil(px_rect.y1 * f - 1e-9);
    r.x0 = std::min(std::max(r.x0, 0), grid_size - 1);
    r.y0 = std::min(std::max(r.y0, 0), grid_size - 1);
    r.x1 = std::max(std::min(r.x1, grid_size), r.x0 + 1);
    r.y1 = std::max(std::min(r.y1, grid_size), r.y0 + 1);
    return r;
}

LocationGuidance render_location_mask(const RectI& square_px, int image_size, int latent_size) {
    if (image_size % latent_size)
        throw std::invalid_argument("render_location_mask: latent size must divide image size");
    LocationGuidance lg;
    lg.square_bbox_px = square_px;
    lg.square_bbox_latent = scale_rect_outward(square_px, image_size, latent_size);
    lg.relative_size = (double)std::max(square_px.width(), square_px.height()) / image_size;
    lg.mask_latent = Plane(latent_size, latent_size);
    for (int y = lg.square_bbox_latent.y0; y < lg.square_bbox_latent.y1; ++y)
        for (int x = lg.square_bbox_latent.x0; x < lg.square_bbox_latent.x1; ++x)
            lg.mask_latent.at(y, x) = 1.0f;
    return lg;
}

PoseExprMap render_pose_expr_map(const std::array<Point2, kNumKeypoints>& keypoints_px,
                                 const RectI& square_bbox_px, int out_resolution) {
    if (square_bbox_px.empty())
        throw std::invalid_argument("render_pose_expr_map: empty square bbox");
    PoseExprMap pe;
    pe.map = Tensor({out_resolution, out_resolution, kPoseExprChannels});

    const double side = square_bbox_px.width();
    const double sc = out_resolution / side;
    bool clipped = false;
    for (int i = 0; i < kNumKeypoints; ++i) {
        Point2 q{(keypoints_px[(size_t)i].x - square_bbox_px.x0) * sc,
                 (keypoints_px[(size_t)i].y - square_bbox_px.y0) * sc};
        if (q.x < 0 || q.y < 0 || q.x > out_resolution || q.y > out_resolution) {
            clipped = true;
            q.x = std::min(std::max(q.x, 0.0), (double)out_resolution);
            q.y = std::min(std::max(q.y, 0.0), (double)out_resolution);
        }
        pe.source_keypoints[(size_t)i] = q;
    }
    if (clipped)
        std::fprintf(stderr, "[conditions] warning: keypoints outside square bbox were clipped\n");

    const double sigma = out_resolution / 24.0;
    const double sigma_line = out_resolution / 32.0;
    // channel per group: 0 = eyes, 1 = nose, 2 = mouth corners, 3 = skeleton
    const int group_of[kNumKeypoints] = {0, 0, 1, 2, 2};
    static const int segments[4][2] = {{0, 2}, {1, 2}, {2, 3}, {2, 4}};

    for (int y = 0; y < out_resolution; ++y) {
        for (int x = 0; x < out_resolution; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            float* cell = pe.map.ptr() + ((int64_t)y * out_resolution + x) * kPoseExprChannels;
            for (int i = 0; i < kNumKeypoints; ++i) {
                const double d2 = (px - pe.source_keypoints[(size_t)i].x) *
                                      (px - pe.source_keypoints[(size_t)i].x) +
                                  (py - pe.source_keypoints[(size_t)i].y) *
                                      (py - pe.source_keypoints[(size_t)i].y);
                const float v = (float)std::exp(-d2 / (2.0 * sigma * sigma));
                cell[group_of[i]] = std::max(cell[group_of[i]], v);
            }
            for (const auto& seg : segments) {
                const Point2& a = pe.source_keypoints[(size_t)seg[0]];
                const Point2& b = pe.source_keypoints[(size_t)seg[1]];
                const double abx = b.x - a.x, aby = b.y - a.y;
                const double len2 = abx * abx + aby * aby;
                double t = len2 > 0 ? ((px - a.x) * abx + (py - a.y) * aby) / len2 : 0.0;
                t = std::min(std::max(t, 0.0), 1.0);
                const double dx = px - (a.x + t * abx), dy = py - (a.y + t * aby);
                const float v = (float)std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_line * sigma_line));
                cell[3] = std::max(cell[3], v);
            }
        }
    }
    return pe;
}

// --- identity encoder --------------------------------------------------------

void IdEncoderNet::init(const std::string& prefix, int input_size_, int k_tokens_, int token_dim_,
                        Rng& rng) {
    input_size = input_size_;
    k_tokens = k_tokens_;
    token_dim = token_dim_;
    c1.init(prefix + ".c1", 3, 3, 24, 1, 1, rng);
    n1.init(prefix + ".n1", 24, 8);
    c2.init(prefix + ".c2", 3, 24, 32, 2, 1, rng);
    n2.init(prefix + ".n2", 32, 8);
    c3.init(prefix + ".c3", 3, 32, 48, 2, 1, rng);
    n3.init(prefix + ".n3", 48, 8);
    c4.init(prefix + ".c4", 3, 48, 64, 2, 1, rng);
    n4.init(prefix + ".n4", 64, 8);
    const int spatial = input_size / 8;
    fc.init(prefix + ".fc", spatial * spatial * 64, k_tokens * token_dim, rng);
}

Var IdEncoderNet::fwd(Tape& tp, Var crops) {
    const int n = tp.val(crops).dim(0);
    Var h = op_silu(tp, n1.fwd(tp, c1.fwd(tp, crops)));
    h = op_silu(tp, n2.fwd(tp, c2.fwd(tp, h)));
    h = op_silu(tp, n3.fwd(tp, c3.fwd(tp, h)));
    h = op_silu(tp, n4.fwd(tp, c4.fwd(tp, h)));
    const std::vector<int> hs = tp.val(h).shape;
    h = op_reshape(tp, h, {n, hs[1] * hs[2] * hs[3]});
    h = fc.fwd(tp, h);
    return op_reshape(tp, h, {n, k_tokens, token_dim});
}

void IdEncoderNet::visit(const ParamVisitor<float>& v) {
    c1.visit(v); n1.visit(v); c2.visit(v); n2.visit(v);
    c3.visit(v); n3.visit(v); c4.visit(v); n4.visit(v);
    fc.visit(v);
}

std::pair<Image, Plane> make_id_crop(const Image& image, const Plane& alpha,
                                     const RectI& square_px, int input_size) {
    Image c = resize_bilinear(crop(image, square_px), input_size, input_size);
    Plane m = resize_bilinear(crop(alpha, square_px), input_size, input_size);
    return {std::move(c), std::move(m)};
}

Tensor apply_pixel_mask(const Image& crop, const Plane& mask) {
    if (crop.height != mask.height || crop.width != mask.width)
        throw std::invalid_argument("apply_pixel_mask: crop/mask size mismatch");
    Tensor t({1, crop.height, crop.width, 3});
    for (int y = 0; y < crop.height; ++y)
        for (int x = 0; x < crop.width; ++x) {
            const float m = mask.at(y, x);
            const float* p = crop.px(y, x);
            float* o = t.ptr() + ((int64_t)y * crop.width + x) * 3;
            for (int c = 0; c < 3; ++c) o[c] = p[c] * m;
        }
    return t;
}

IdentityEmbedding encode_identity(const IdEncoderNet& enc, LinearT<float>& proj,
                                  const Image& crop, const Plane& mask, int source_identity) {
    if (crop.height != enc.input_size || crop.width != enc.input_size)
        throw std::invalid_argument("encode_identity: crop must match encoder input size");
    bool any = false;
    for (float v : mask.data)
        if (v != 0.0f) { any = true; break; }
    if (!any) throw std::invalid_argument("encode_identity: all-zero mask (no face content)");

    Tape tp;
    tp.grad_enabled = false;
    Var x = tp.leaf(apply_pixel_mask(crop, mask));
    Var tokens = const_cast<IdEncoderNet&>(enc).fwd(tp, x);
    Var projected = proj.fwd(tp, tokens);
    IdentityEmbedding emb;
    const auto& tv = tp.val(projected);
    emb.tokens = Tensor({tv.dim(1), tv.dim(2)}, tv.data);
    emb.source_identity = source_identity;
    return emb;
}

// --- prompt table --------------------------------------------------------------

void PromptTable::init(const std::string& name, int vocab_, int k_tokens_, int dim_, Rng& rng) {
    vocab = vocab_;
    k_tokens = k_tokens_;
    dim = dim_;
    table.name = name;
    table.value = Tensor({vocab + 1, k_tokens, dim});
    rng.fill_normal(table.value, 0.5);
}

Tensor encode_prompt(const PromptTable& table, std::optional<int> attr) {
    int idx;
    if (!attr.has_value()) {
        idx = table.null_index();
    } else {
        if (*attr < 0 || *attr >= table.vocab)
            throw std::out_of_range("encode_prompt: attr " + std::to_string(*attr) +
                                    " outside vocabulary of size " + std::to_string(table.vocab));
        idx = *attr;
    }
    Tensor out({table.k_tokens, table.dim});
    const int64_t block = (int64_t)table.k_tokens * table.dim;
    std::copy_n(table.table.value.ptr() + idx * block, block, out.ptr());
    return out;
}

}  // namespace glyphdiff
