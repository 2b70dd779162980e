#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "glyphdiff/geometry.hpp"
#include "glyphdiff/image.hpp"
#include "glyphdiff/rng.hpp"

namespace glyphdiff {

constexpr int kShapeParams = 8;
constexpr int kNumKeypoints = 5;

// One synthetic identity: a closed blob contour (8 spoke radii in [0,1])
// plus a saturated base color. The color box is disjoint from the neutral
// background palette so glyph pixels are segmentable by channel spread.
struct IdentityCard {
    int identity_id = 0;
    std::array<float, kShapeParams> shape{};
    std::array<float, 3> palette{};
};

struct WorldConfig {
    int image_size = 64;
    int n_identities = 64;
    float separation_margin = 0.08f;
    int n_backgrounds = 8;
};

// Ground truth for one scene. face_bbox is a pixel rect whose long side
// defines the face scale; the glyph is drawn in the squared bbox.
struct SceneSpec {
    int identity_id = 0;
    RectI face_bbox;
    double pose_angle = 0.0;   // radians, in [-pi/3, pi/3]
    double expression = 0.5;   // mouth-arc curvature, in [0,1]
    int background_attr = 0;
    int image_size = 64;
};

struct RenderResult {
    Image image;
    std::array<Point2, kNumKeypoints> keypoints;  // L eye, R eye, nose, L mouth, R mouth
    Plane glyph_alpha;                            // exact coverage (parsing substitute)
};

// identity bank ------------------------------------------------------------

std::vector<IdentityCard> make_identity_bank(int n_identities, uint64_t seed,
                                             float margin = 0.08f);

float bank_min_pairwise_linf(const std::vector<IdentityCard>& bank);

// scenes --------------------------------------------------------------------

// Squared-bbox long side / image edge falls in [size_lo, size_hi] exactly.
SceneSpec sample_scene_spec(const std::vector<IdentityCard>& bank, int image_size,
                            double size_lo, double size_hi, Rng& rng);

RenderResult render_scene(const SceneSpec& spec, const std::vector<IdentityCard>& bank);

// keypoint positions in glyph-local units (pose 0, unit frame [-1,1], y down)
std::array<Point2, kNumKeypoints> local_keypoints(double expression);

// pixel-space keypoints for a scene (same transform the renderer applies)
std::array<Point2, kNumKeypoints> scene_keypoints(const SceneSpec& spec);

// background value (all channels equal) at a pixel
float background_value(int attr, int x, int y);
int n_background_attrs();

// glyph segmentation --------------------------------------------------------

// Saturated glyph pixels have channel spread above this; neutral backgrounds
// stay below it by construction.
constexpr float kGlyphSpreadThreshold = 0.30f;

bool is_glyph_pixel(const float* rgb);

// Percentile-trimmed bbox of glyph-classified pixels; empty rect when fewer
// than 8 pixels pass the threshold.
RectI detect_glyph_bbox(const Image& img, double trim = 0.02);

// Nearest background template match over non-glyph pixels; returns
// (attr, mean abs error). Used as the pretraining sample gate.
std::pair<int, double> classify_background(const Image& img);

// dataset -------------------------------------------------------------------

struct DatasetMeta {
    WorldConfig world;
    uint64_t bank_seed = 0;
    uint64_t scene_seed = 0;
    double size_lo = 0.25, size_hi = 0.5;
    int n_scenes = 0;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<IdentityCard> bank;
    std::vector<SceneSpec> scenes;
    std::vector<std::string> image_paths;  // relative to root
    std::string root;

    RenderResult render(size_t index) const { return render_scene(scenes[index], bank); }

    static Dataset load(const std::string& dir);
};

// Renders all scenes to PNG, writes annotations.jsonl + meta.json.
Dataset generate_dataset(const std::string& dir, const DatasetMeta& meta);

std::string scene_to_json(const SceneSpec& spec, const std::string& image_path,
                          const std::array<Point2, kNumKeypoints>& keypoints);

}  // namespace glyphdiff
