#pragma once

#include <array>
#include <optional>

#include "glyphdiff/geometry.hpp"
#include "glyphdiff/image.hpp"
#include "glyphdiff/layers.hpp"
#include "glyphdiff/tensor.hpp"
#include "glyphdiff/world.hpp"

namespace glyphdiff {

constexpr int kPoseExprChannels = 4;  // eyes / nose / mouth / skeleton

// Square face-location guidance: pixel rect, its outward-rounded latent
// rect, and the binary mask at latent resolution.
struct LocationGuidance {
    RectI square_bbox_px;
    RectI square_bbox_latent;
    Plane mask_latent;     // entries exactly 0 or 1
    double relative_size = 0.0;
};

struct PoseExprMap {
    Tensor map;  // (res, res, kPoseExprChannels), values in [0,1]
    std::array<Point2, kNumKeypoints> source_keypoints;  // in cropped-face coords
};

struct IdentityEmbedding {
    Tensor tokens;  // (K, D)
    int source_identity = -1;
};

// Expand the bbox to a square on its longer edge about the center, translate
// (never shrink) to fit the image, clamp to the full frame if the side
// exceeds it. Idempotent.
RectI square_bbox(const RectI& bbox, int image_size);

// Pixel rect -> coarser grid with outward rounding (floor mins, ceil maxes),
// clamped to at least 1x1 inside the grid.
RectI scale_rect_outward(const RectI& px_rect, int image_size, int grid_size);

LocationGuidance render_location_mask(const RectI& square_px, int image_size, int latent_size);

PoseExprMap render_pose_expr_map(const std::array<Point2, kNumKeypoints>& keypoints_px,
                                 const RectI& square_bbox_px, int out_resolution);

// --- identity encoder -------------------------------------------------------

// Small conv trunk producing K tokens of dim D from a masked 32x32 face
// crop. The trunk trains during warmup only; the projection layer stays
// trainable throughout (see training module).
struct IdEncoderNet {
    Conv2dT<float> c1, c2, c3, c4;
    GroupNormT<float> n1, n2, n3, n4;
    LinearT<float> fc;
    int input_size = 32, k_tokens = 8, token_dim = 64;

    void init(const std::string& prefix, int input_size_, int k_tokens_, int token_dim_, Rng& rng);
    // crops (N, input, input, 3), already masked -> (N, K, D)
    Var fwd(Tape& tp, Var crops);
    void visit(const ParamVisitor<float>& v);
};

// crop the squared face region from an image (+ alpha) and resize both to the
// encoder input size
std::pair<Image, Plane> make_id_crop(const Image& image, const Plane& alpha,
                                     const RectI& square_px, int input_size);

Tensor apply_pixel_mask(const Image& crop, const Plane& mask);  // (1,S,S,3), mask zeroed

// Full single-crop path: masked crop -> trunk -> projection. Throws on an
// all-zero mask.
IdentityEmbedding encode_identity(const IdEncoderNet& enc, LinearT<float>& proj,
                                  const Image& crop, const Plane& mask,
                                  int source_identity = -1);

// --- prompt embedding --------------------------------------------------------

// Learned per-attribute token blocks; row `vocab` is the reserved null block.
struct PromptTable {
    Param table;  // (vocab+1, k_tokens, dim)
    int vocab = 8, k_tokens = 4, dim = 64;

    void init(const std::string& name, int vocab_, int k_tokens_, int dim_, Rng& rng);
    int null_index() const { return vocab; }
    void visit(const ParamVisitor<float>& v) { v(table); }
};

// attr = nullopt selects the null block; out-of-vocabulary attrs are rejected
Tensor encode_prompt(const PromptTable& table, std::optional<int> attr);

}  // namespace glyphdiff
