#include <doctest.h>

#include <filesystem>

#include "glyphdiff/conditions.hpp"
#include "glyphdiff/world.hpp"
#include "test_util.hpp"

using namespace glyphdiff;
namespace fs = std::filesystem;

TEST_CASE("identity bank: precondition, determinism, separation margin") {
    CHECK_THROWS_AS(make_identity_bank(1, 0), std::invalid_argument);

    const auto bank_a = make_identity_bank(64, 0);
    const auto bank_b = make_identity_bank(64, 0);
    REQUIRE(bank_a.size() == 64);
    for (size_t i = 0; i < bank_a.size(); ++i) {
        CHECK(bank_a[i].identity_id == (int)i);
        CHECK(bank_a[i].shape == bank_b[i].shape);
        CHECK(bank_a[i].palette == bank_b[i].palette);
    }

    // exhaustive pairwise scan over all 64*63/2 pairs
    CHECK(bank_min_pairwise_linf(bank_a) >= 0.08f);

    const auto bank_c = make_identity_bank(64, 1);
    bool any_diff = false;
    for (size_t i = 0; i < bank_a.size(); ++i) any_diff |= bank_a[i].shape != bank_c[i].shape;
    CHECK(any_diff);
}

TEST_CASE("scene sampling: ratio ranges and degenerate interval") {
    const auto bank = make_identity_bank(8, 3);
    Rng rng(4);

    for (int i = 0; i < 10000; ++i) {
        const SceneSpec s = sample_scene_spec(bank, 64, 0.25, 0.5, rng);
        const RectI sq = square_bbox(s.face_bbox, 64);
        const double ratio = (double)sq.width() / 64.0;
        CHECK(ratio >= 0.25);
        CHECK(ratio <= 0.5);
        CHECK(s.face_bbox.x0 >= 0);
        CHECK(s.face_bbox.y0 >= 0);
        CHECK(s.face_bbox.x1 <= 64);
        CHECK(s.face_bbox.y1 <= 64);
        CHECK(sq.width() == sq.height());
    }

    for (int i = 0; i < 2000; ++i) {
        const SceneSpec s = sample_scene_spec(bank, 64, 1.0 / 7.0, 1.0 / 6.0, rng);
        const RectI sq = square_bbox(s.face_bbox, 64);
        CHECK((double)sq.width() / 64.0 < 1.0 / 6.0 + 1e-9);
        CHECK((double)sq.width() / 64.0 >= 1.0 / 7.0 - 1e-9);
    }

    const SceneSpec s = sample_scene_spec(bank, 128, 0.5, 0.5, rng);
    CHECK(std::max(s.face_bbox.width(), s.face_bbox.height()) == 64);

    CHECK_THROWS_AS(sample_scene_spec(bank, 64, 0.0, 0.5, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_scene_spec(bank, 64, 0.6, 0.5, rng), std::invalid_argument);
}

TEST_CASE("render: determinism and keypoint symmetry") {
    const auto bank = make_identity_bank(8, 5);
    SceneSpec spec;
    spec.image_size = 64;
    spec.identity_id = 3;
    spec.face_bbox = RectI{16, 16, 48, 48};
    spec.pose_angle = 0.0;
    spec.expression = 0.5;
    spec.background_attr = 2;

    const RenderResult a = render_scene(spec, bank);
    const RenderResult b = render_scene(spec, bank);
    CHECK(a.image == b.image);
    for (int i = 0; i < kNumKeypoints; ++i) {
        CHECK(a.keypoints[(size_t)i].x == b.keypoints[(size_t)i].x);
        CHECK(a.keypoints[(size_t)i].y == b.keypoints[(size_t)i].y);
    }

    // pose 0, centered bbox: keypoints mirror about the vertical centerline
    const double cx = 32.0;
    CHECK(a.keypoints[0].x + a.keypoints[1].x == doctest::Approx(2 * cx).epsilon(1e-9));
    CHECK(a.keypoints[0].y == doctest::Approx(a.keypoints[1].y));
    CHECK(a.keypoints[2].x == doctest::Approx(cx));
    CHECK(a.keypoints[3].x + a.keypoints[4].x == doctest::Approx(2 * cx).epsilon(1e-9));
    CHECK(a.keypoints[3].y == doctest::Approx(a.keypoints[4].y));
}

TEST_CASE("render: rotated keypoints match the rotation oracle") {
    const auto bank = make_identity_bank(8, 6);
    SceneSpec base;
    base.image_size = 64;
    base.identity_id = 1;
    base.face_bbox = RectI{10, 14, 42, 46};
    base.pose_angle = 0.0;
    base.expression = 0.31;
    base.background_attr = 0;

    SceneSpec rot = base;
    rot.pose_angle = M_PI / 6.0;

    const auto kp0 = scene_keypoints(base);
    const auto kp1 = scene_keypoints(rot);
    const RectI sq = square_bbox(base.face_bbox, 64);
    const Point2 center{sq.x0 + sq.width() / 2.0, sq.y0 + sq.width() / 2.0};
    for (int i = 0; i < kNumKeypoints; ++i) {
        const Point2 expect = testutil::rotate_oracle(kp0[(size_t)i], center, M_PI / 6.0);
        CHECK(std::hypot(expect.x - kp1[(size_t)i].x, expect.y - kp1[(size_t)i].y) < 0.5);
    }
}

TEST_CASE("glyph detection and background classification on clean renders") {
    const auto bank = make_identity_bank(16, 7);
    Rng rng(8);
    for (int trial = 0; trial < 24; ++trial) {
        const SceneSpec spec = sample_scene_spec(bank, 64, 0.2, 0.5, rng);
        const RenderResult r = render_scene(spec, bank);
        const RectI sq = square_bbox(spec.face_bbox, 64);

        const RectI det = detect_glyph_bbox(r.image);
        REQUIRE(!det.empty());
        // detected glyph sits inside the (slightly padded) squared bbox
        const RectI pad{sq.x0 - 1, sq.y0 - 1, sq.x1 + 1, sq.y1 + 1};
        CHECK(pad.contains(det));
        CHECK(rect_iou(det, sq) > 0.2);

        const auto [attr, err] = classify_background(r.image);
        CHECK(attr == spec.background_attr);
        CHECK(err < 0.02);
    }
}

TEST_CASE("background templates are neutral; glyph palettes are saturated") {
    for (int a = 0; a < n_background_attrs(); ++a)
        for (int y = 0; y < 64; y += 7)
            for (int x = 0; x < 64; x += 7) {
                const float v = background_value(a, x, y);
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
                const float rgb[3] = {v, v, v};
                CHECK(!is_glyph_pixel(rgb));
            }
    const auto bank = make_identity_bank(64, 11);
    for (const auto& card : bank) CHECK(is_glyph_pixel(card.palette.data()));
}

TEST_CASE("dataset write/load round trip and annotation schema") {
    const std::string dir = (fs::temp_directory_path() / "gd_ds_test").string();
    fs::remove_all(dir);
    DatasetMeta meta;
    meta.world.image_size = 64;
    meta.world.n_identities = 8;
    meta.n_scenes = 12;
    meta.size_lo = 0.2;
    meta.size_hi = 0.5;
    meta.bank_seed = 3;
    meta.scene_seed = 4;
    const Dataset ds = generate_dataset(dir, meta);
    REQUIRE(ds.scenes.size() == 12);
    CHECK(fs::exists(fs::path(dir) / "images/000000.png"));
    CHECK(fs::exists(fs::path(dir) / "annotations.jsonl"));

    const Dataset loaded = Dataset::load(dir);
    REQUIRE(loaded.scenes.size() == ds.scenes.size());
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        CHECK(loaded.scenes[i].identity_id == ds.scenes[i].identity_id);
        CHECK(loaded.scenes[i].face_bbox == ds.scenes[i].face_bbox);
        CHECK(loaded.scenes[i].pose_angle == doctest::Approx(ds.scenes[i].pose_angle));
        CHECK(loaded.scenes[i].expression == doctest::Approx(ds.scenes[i].expression));
        CHECK(loaded.scenes[i].background_attr == ds.scenes[i].background_attr);
    }
    for (size_t i = 0; i < loaded.bank.size(); ++i) {
        CHECK(loaded.bank[i].shape == ds.bank[i].shape);
        CHECK(loaded.bank[i].palette == ds.bank[i].palette);
    }

    // rendered image matches the PNG payload after 8-bit quantization
    const RenderResult r = loaded.render(0);
    const Image png = read_png((fs::path(dir) / loaded.image_paths[0]).string());
    REQUIRE(png.height == r.image.height);
    float max_diff = 0.0f;
    for (size_t i = 0; i < png.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(png.data[i] - r.image.data[i]));
    CHECK(max_diff <= 0.5f / 255.0f + 1e-6f);

    // schema keys
    const std::string line = scene_to_json(ds.scenes[0], "images/000000.png",
                                           scene_keypoints(ds.scenes[0]));
    for (const char* key : {"identity_id", "bbox", "pose", "expr", "bg", "image", "keypoints"})
        CHECK(line.find(std::string("\"") + key + "\"") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("png round trip is exact at 8-bit") {
    const std::string path = (fs::temp_directory_path() / "gd_png_test.png").string();
    Image img(17, 23);
    Rng rng(9);
    for (auto& v : img.data) v = (float)((int)rng.uniform_int(256)) / 255.0f;
    write_png(path, img);
    const Image back = read_png(path);
    REQUIRE(back.height == img.height);
    REQUIRE(back.width == img.width);
    CHECK(back.data == img.data);
    fs::remove(path);
}
