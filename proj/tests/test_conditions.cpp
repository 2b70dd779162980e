#include <doctest.h>

#include "glyphdiff/conditions.hpp"
#include "test_util.hpp"

using namespace glyphdiff;

TEST_CASE("square_bbox: worked examples") {
    // side 40, center-x preserved
    CHECK(square_bbox(RectI{10, 20, 30, 60}, 128) == RectI{0, 20, 40, 60});
    // identity case
    CHECK(square_bbox(RectI{0, 0, 128, 128}, 128) == RectI{0, 0, 128, 128});
    // border clamp translates: side 40, x-range pushed back to (88,128)
    const RectI r = square_bbox(RectI{120, 50, 127, 90}, 128);
    CHECK(r.width() == 40);
    CHECK(r.x0 == 88);
    CHECK(r.x1 == 128);
    CHECK(r.y0 == 50);
    CHECK(r.y1 == 90);

    CHECK_THROWS_AS(square_bbox(RectI{5, 5, 5, 9}, 64), std::invalid_argument);
}

TEST_CASE("square_bbox: idempotence and containment properties") {
    Rng rng(41);
    for (int i = 0; i < 3000; ++i) {
        const int s = 32 + (int)rng.uniform_int(97);
        const int w = 1 + (int)rng.uniform_int(s);
        const int h = 1 + (int)rng.uniform_int(s);
        const int x0 = (int)rng.uniform_int(s - w + 1);
        const int y0 = (int)rng.uniform_int(s - h + 1);
        const RectI b{x0, y0, x0 + w, y0 + h};
        const RectI sq = square_bbox(b, s);
        CHECK(sq.width() == sq.height());
        CHECK(sq.width() == std::min(std::max(w, h), s));
        CHECK(sq.x0 >= 0);
        CHECK(sq.y0 >= 0);
        CHECK(sq.x1 <= s);
        CHECK(sq.y1 <= s);
        if (sq.width() < s) CHECK(sq.contains(b));
        CHECK(square_bbox(sq, s) == sq);
    }
}

TEST_CASE("render_location_mask: worked examples and mask invariants") {
    // full-image bbox -> all ones
    const LocationGuidance full = render_location_mask(RectI{0, 0, 128, 128}, 128, 32);
    for (float v : full.mask_latent.data) CHECK(v == 1.0f);

    // exact grid alignment
    const LocationGuidance a = render_location_mask(RectI{32, 32, 96, 96}, 128, 32);
    CHECK(a.square_bbox_latent == RectI{8, 8, 24, 24});
    int ones = 0;
    for (float v : a.mask_latent.data) ones += v == 1.0f;
    CHECK(ones == 256);

    // outward rounding
    const LocationGuidance b = render_location_mask(RectI{33, 33, 95, 95}, 128, 32);
    CHECK(b.square_bbox_latent == RectI{8, 8, 24, 24});

    CHECK(a.relative_size == doctest::Approx(0.5));

    // binarity + rectangular support on random rects
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const int side = 4 + (int)rng.uniform_int(60);
        const int x0 = (int)rng.uniform_int(64 - side + 1);
        const int y0 = (int)rng.uniform_int(64 - side + 1);
        const LocationGuidance lg = render_location_mask(RectI{x0, y0, x0 + side, y0 + side}, 64, 32);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const float v = lg.mask_latent.at(y, x);
                CHECK((v == 0.0f || v == 1.0f));
                const bool inside = x >= lg.square_bbox_latent.x0 && x < lg.square_bbox_latent.x1 &&
                                    y >= lg.square_bbox_latent.y0 && y < lg.square_bbox_latent.y1;
                CHECK(v == (inside ? 1.0f : 0.0f));
            }
    }
}

TEST_CASE("pose-expr map: center keypoints, scale invariance, rotation oracle") {
    // all keypoints at bbox center -> every disc centered at out_res/2
    const RectI sq{16, 16, 48, 48};
    std::array<Point2, kNumKeypoints> center_kps;
    center_kps.fill(Point2{32.0, 32.0});
    const PoseExprMap pe = render_pose_expr_map(center_kps, sq, 32);
    for (const auto& q : pe.source_keypoints) {
        CHECK(q.x == doctest::Approx(16.0));
        CHECK(q.y == doctest::Approx(16.0));
    }

    // joint 2x scaling of bbox and keypoints leaves the map unchanged
    SceneSpec spec;
    spec.image_size = 128;
    spec.face_bbox = RectI{20, 24, 52, 56};
    spec.pose_angle = 0.4;
    spec.expression = 0.7;
    const auto kp1 = scene_keypoints(spec);
    const RectI sq1 = square_bbox(spec.face_bbox, 128);
    SceneSpec spec2 = spec;
    spec2.face_bbox = RectI{40, 48, 104, 112};
    const RectI sq2 = square_bbox(spec2.face_bbox, 128);
    REQUIRE(sq2.width() == 2 * sq1.width());
    std::array<Point2, kNumKeypoints> kp2;
    for (int i = 0; i < kNumKeypoints; ++i)
        kp2[(size_t)i] = {sq2.x0 + 2.0 * (kp1[(size_t)i].x - sq1.x0),
                          sq2.y0 + 2.0 * (kp1[(size_t)i].y - sq1.y0)};
    const PoseExprMap m1 = render_pose_expr_map(kp1, sq1, 32);
    const PoseExprMap m2 = render_pose_expr_map(kp2, sq2, 32);
    CHECK(m1.map.data == m2.map.data);

    // rotated keypoints land where the rotation oracle says, in map pixels
    SceneSpec rot = spec;
    rot.pose_angle = spec.pose_angle + M_PI / 6.0;
    const auto kpr = scene_keypoints(rot);
    const PoseExprMap mr = render_pose_expr_map(kpr, sq1, 32);
    const double scale = 32.0 / sq1.width();
    const Point2 center_map{(sq1.x0 + sq1.width() / 2.0 - sq1.x0) * scale,
                            (sq1.y0 + sq1.width() / 2.0 - sq1.y0) * scale};
    for (int i = 0; i < kNumKeypoints; ++i) {
        const Point2 expect =
            testutil::rotate_oracle(m1.source_keypoints[(size_t)i], center_map, M_PI / 6.0);
        CHECK(std::hypot(expect.x - mr.source_keypoints[(size_t)i].x,
                         expect.y - mr.source_keypoints[(size_t)i].y) < 0.5);
    }

    // range bound
    for (float v : m1.map.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("encode_identity: determinism, masked-input contract, shape, errors") {
    Rng rng(5);
    IdEncoderNet enc;
    enc.init("idenc", 32, 8, 64, rng);
    LinearT<float> proj;
    proj.init("proj", 64, 64, rng);

    Image crop(32, 32);
    for (auto& v : crop.data) v = (float)rng.uniform();
    Plane mask(32, 32);
    for (int y = 8; y < 24; ++y)
        for (int x = 8; x < 24; ++x) mask.at(y, x) = 1.0f;

    const IdentityEmbedding e1 = encode_identity(enc, proj, crop, mask, 7);
    const IdentityEmbedding e2 = encode_identity(enc, proj, crop, mask, 7);
    CHECK(e1.tokens.data == e2.tokens.data);
    CHECK(e1.tokens.dim(0) == 8);
    CHECK(e1.tokens.dim(1) == 64);
    CHECK(e1.source_identity == 7);

    // perturbing only mask-zero pixels leaves the tokens bitwise unchanged
    Image crop2 = crop;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (mask.at(y, x) == 0.0f) {
                float* p = crop2.px(y, x);
                p[0] = 1.0f - p[0];
                p[1] = 0.0f;
                p[2] = 1.0f;
            }
    const IdentityEmbedding e3 = encode_identity(enc, proj, crop2, mask);
    CHECK(e3.tokens.data == e1.tokens.data);

    Plane zero_mask(32, 32);
    CHECK_THROWS_WITH_AS(encode_identity(enc, proj, crop, zero_mask),
                         doctest::Contains("all-zero mask"), std::invalid_argument);
}

TEST_CASE("encode_prompt: lookup, null block, bounds") {
    Rng rng(6);
    PromptTable table;
    table.init("prompt.table", 8, 4, 64, rng);

    const Tensor a = encode_prompt(table, 3);
    const Tensor b = encode_prompt(table, 3);
    CHECK(a.data == b.data);
    CHECK(a.dim(0) == 4);
    CHECK(a.dim(1) == 64);

    const Tensor null_block = encode_prompt(table, std::nullopt);
    bool differs = false;
    for (int attr = 0; attr < 8; ++attr) {
        const Tensor row = encode_prompt(table, attr);
        differs = row.data != null_block.data;
        CHECK(differs);
    }
    CHECK_THROWS_AS(encode_prompt(table, 9), std::out_of_range);
    CHECK_THROWS_AS(encode_prompt(table, -1), std::out_of_range);
}
