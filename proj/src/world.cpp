#include "glyphdiff/world.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "glyphdiff/conditions.hpp"
#include "glyphdiff/parallel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace glyphdiff {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kBackgrounds = 8;
constexpr float kPaletteMinDist = 0.05f;  // RGB L-inf between any two identities

void hsv_to_rgb(double h, double s, double v, float* rgb) {
    const double hh = h * 6.0;
    const int i = (int)hh % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    double r, g, b;
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    rgb[0] = (float)r;
    rgb[1] = (float)g;
    rgb[2] = (float)b;
}

float linf_shape(const IdentityCard& a, const IdentityCard& b) {
    float m = 0.0f;
    for (int i = 0; i < kShapeParams; ++i) m = std::max(m, std::abs(a.shape[i] - b.shape[i]));
    return m;
}

float linf_palette(const IdentityCard& a, const IdentityCard& b) {
    float m = 0.0f;
    for (int i = 0; i < 3; ++i) m = std::max(m, std::abs(a.palette[i] - b.palette[i]));
    return m;
}

// glyph-local feature geometry (unit frame [-1,1], y down)
constexpr double kEyeY = -0.32, kEyeX = 0.40, kEyeR = 0.085;
constexpr double kNoseY = 0.05, kNoseR = 0.065;
constexpr double kMouthX = 0.40, kMouthStroke = 0.055;

double mouth_corner_y(double expr) { return 0.36 - 0.26 * (expr - 0.5); }
double mouth_vertex_y(double expr) { return 0.36 + 0.50 * (expr - 0.5); }

double spoke_radius(const IdentityCard& card, double phi) {
    // periodic linear interpolation across 8 spokes
    double a = phi;
    while (a < 0) a += 2.0 * kPi;
    const double step = 2.0 * kPi / kShapeParams;
    const double pos = a / step;
    const int k = (int)pos % kShapeParams;
    const double frac = pos - std::floor(pos);
    const double r0 = 0.62 + 0.33 * card.shape[(size_t)k];
    const double r1 = 0.62 + 0.33 * card.shape[(size_t)((k + 1) % kShapeParams)];
    return r0 + frac * (r1 - r0);
}

}  // namespace

std::vector<IdentityCard> make_identity_bank(int n_identities, uint64_t seed, float margin) {
    if (n_identities < 2)
        throw std::invalid_argument("make_identity_bank: n_identities must be >= 2");
    Rng rng(seed ^ 0xB4A2C0DEull);
    std::vector<IdentityCard> bank;
    bank.reserve((size_t)n_identities);
    const int max_tries = 10000;
    for (int id = 0; id < n_identities; ++id) {
        bool placed = false;
        for (int attempt = 0; attempt < max_tries; ++attempt) {
            IdentityCard card;
            card.identity_id = id;
            for (auto& p : card.shape) p = (float)rng.uniform();
            const double h = rng.uniform();
            const double s = rng.uniform(0.65, 1.0);
            const double v = rng.uniform(0.75, 1.0);
            hsv_to_rgb(h, s, v, card.palette.data());
            bool ok = true;
            for (const auto& other : bank) {
                if (linf_shape(card, other) < margin || linf_palette(card, other) < kPaletteMinDist) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                bank.push_back(card);
                placed = true;
                break;
            }
        }
        if (!placed)
            throw std::runtime_error(
                "make_identity_bank: separation margin unsatisfiable after bounded resampling; "
                "n_identities too large for margin " + std::to_string(margin));
    }
    return bank;
}

float bank_min_pairwise_linf(const std::vector<IdentityCard>& bank) {
    float m = 1.0f;
    for (size_t i = 0; i < bank.size(); ++i)
        for (size_t j = i + 1; j < bank.size(); ++j) m = std::min(m, linf_shape(bank[i], bank[j]));
    return m;
}

SceneSpec sample_scene_spec(const std::vector<IdentityCard>& bank, int image_size,
                            double size_lo, double size_hi, Rng& rng) {
    if (!(size_lo > 0.0 && size_lo <= size_hi && size_hi < 1.0))
        throw std::invalid_argument("sample_scene_spec: need 0 < lo <= hi < 1");
    const int side_min = (int)std::ceil(size_lo * image_size - 1e-9);
    const int side_max = (int)std::floor(size_hi * image_size + 1e-9);
    if (side_min > side_max)
        throw std::invalid_argument("sample_scene_spec: size range admits no integer bbox side at " +
                                    std::to_string(image_size) + " px");

    SceneSpec spec;
    spec.image_size = image_size;
    spec.identity_id = (int)rng.uniform_int((int64_t)bank.size());
    const int side = side_min + (int)rng.uniform_int(side_max - side_min + 1);
    // jitter the short axis so squaring does real work; long side stays `side`
    const int max_shrink = std::min(3, side - 1);
    const int shrink = (int)rng.uniform_int(max_shrink + 1);
    const bool shrink_w = rng.uniform_int(2) == 0;
    const int w = shrink_w ? side - shrink : side;
    const int h = shrink_w ? side : side - shrink;
    const int x0 = (int)rng.uniform_int(image_size - w + 1);
    const int y0 = (int)rng.uniform_int(image_size - h + 1);
    spec.face_bbox = RectI{x0, y0, x0 + w, y0 + h};
    spec.pose_angle = rng.uniform(-kPi / 3.0, kPi / 3.0);
    spec.expression = rng.uniform();
    spec.background_attr = (int)rng.uniform_int(kBackgrounds);
    return spec;
}

std::array<Point2, kNumKeypoints> local_keypoints(double expression) {
    const double my = mouth_corner_y(expression);
    return {Point2{-kEyeX, kEyeY}, Point2{kEyeX, kEyeY}, Point2{0.0, kNoseY},
            Point2{-kMouthX, my}, Point2{kMouthX, my}};
}

int n_background_attrs() { return kBackgrounds; }

float background_value(int attr, int x, int y) {
    const double base = 0.16 + 0.075 * attr;
    const double period = 7.0 + 2.0 * attr;
    const double coord = (attr % 2 == 0) ? (double)y : (double)x;
    const double v = base + 0.05 * std::sin(2.0 * kPi * coord / period + 0.7 * attr);
    return (float)std::min(std::max(v, 0.0), 1.0);
}

std::array<Point2, kNumKeypoints> scene_keypoints(const SceneSpec& spec) {
    const RectI sq = square_bbox(spec.face_bbox, spec.image_size);
    const double side = sq.width();
    const Point2 center{sq.x0 + side / 2.0, sq.y0 + side / 2.0};
    const double scale = side / 2.0;
    const double cosp = std::cos(spec.pose_angle), sinp = std::sin(spec.pose_angle);
    const auto locals = local_keypoints(spec.expression);
    std::array<Point2, kNumKeypoints> out;
    for (int i = 0; i < kNumKeypoints; ++i) {
        const Point2& lp = locals[(size_t)i];
        out[(size_t)i] = {center.x + scale * (cosp * lp.x - sinp * lp.y),
                          center.y + scale * (sinp * lp.x + cosp * lp.y)};
    }
    return out;
}

RenderResult render_scene(const SceneSpec& spec, const std::vector<IdentityCard>& bank) {
    if (spec.identity_id < 0 || spec.identity_id >= (int)bank.size())
        throw std::invalid_argument("render_scene: identity_id outside bank");
    const IdentityCard& card = bank[(size_t)spec.identity_id];
    const int s = spec.image_size;
    const RectI sq = square_bbox(spec.face_bbox, s);
    const double side = sq.width();
    const Point2 center{sq.x0 + side / 2.0, sq.y0 + side / 2.0};
    const double scale = side / 2.0;
    const double cosp = std::cos(spec.pose_angle), sinp = std::sin(spec.pose_angle);

    RenderResult out;
    out.image = Image(s, s);
    out.glyph_alpha = Plane(s, s);
    out.keypoints = scene_keypoints(spec);

    // mouth arc control points in glyph space
    const double my = mouth_corner_y(spec.expression);
    const Point2 mouth_a{-kMouthX, my}, mouth_b{kMouthX, my};
    const Point2 mouth_v{0.0, mouth_vertex_y(spec.expression)};
    constexpr int kArcSamples = 48;
    std::array<Point2, kArcSamples + 1> arc;
    for (int i = 0; i <= kArcSamples; ++i) {
        const double t = (double)i / kArcSamples;
        const double u = 1.0 - t;
        arc[(size_t)i] = {u * u * mouth_a.x + 2 * u * t * mouth_v.x + t * t * mouth_b.x,
                          u * u * mouth_a.y + 2 * u * t * mouth_v.y + t * t * mouth_b.y};
    }

    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const float bg = background_value(spec.background_attr, x, y);
            float* px = out.image.px(y, x);
            px[0] = px[1] = px[2] = bg;
            if (x < sq.x0 || x >= sq.x1 || y < sq.y0 || y >= sq.y1) continue;

            const double vx = (x + 0.5) - center.x, vy = (y + 0.5) - center.y;
            // inverse pose rotation into glyph space
            const double ux = (cosp * vx + sinp * vy) / scale;
            const double uy = (-sinp * vx + cosp * vy) / scale;
            const double rho = std::sqrt(ux * ux + uy * uy);
            const double r = spoke_radius(card, std::atan2(uy, ux));
            const double alpha = std::min(std::max((r - rho) * scale + 0.5, 0.0), 1.0);
            if (alpha <= 0.0) continue;

            // facial features darken the palette
            double f = 0.0;
            auto disc = [&](double cx, double cy, double rad) {
                const double d = std::hypot(ux - cx, uy - cy);
                f = std::max(f, std::min(std::max((rad - d) * scale + 0.5, 0.0), 1.0));
            };
            disc(-kEyeX, kEyeY, kEyeR);
            disc(kEyeX, kEyeY, kEyeR);
            disc(0.0, kNoseY, kNoseR);
            double dm = 1e9;
            for (int i = 0; i < kArcSamples; ++i) {
                const Point2& a = arc[(size_t)i];
                const Point2& b = arc[(size_t)i + 1];
                const double abx = b.x - a.x, aby = b.y - a.y;
                const double len2 = abx * abx + aby * aby;
                double t = len2 > 0 ? ((ux - a.x) * abx + (uy - a.y) * aby) / len2 : 0.0;
                t = std::min(std::max(t, 0.0), 1.0);
                dm = std::min(dm, std::hypot(ux - (a.x + t * abx), uy - (a.y + t * aby)));
            }
            f = std::max(f, std::min(std::max((kMouthStroke - dm) * scale + 0.5, 0.0), 1.0));

            const float dark = (float)(1.0 - 0.72 * f);
            for (int c = 0; c < 3; ++c)
                px[c] = (float)(bg * (1.0 - alpha) + card.palette[(size_t)c] * dark * alpha);
            out.glyph_alpha.at(y, x) = (float)alpha;
        }
    }
    return out;
}

bool is_glyph_pixel(const float* rgb) {
    const float mx = std::max(rgb[0], std::max(rgb[1], rgb[2]));
    const float mn = std::min(rgb[0], std::min(rgb[1], rgb[2]));
    return mx - mn > kGlyphSpreadThreshold;
}

RectI detect_glyph_bbox(const Image& img, double trim) {
    std::vector<int> xs, ys;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (is_glyph_pixel(img.px(y, x))) {
                xs.push_back(x);
                ys.push_back(y);
            }
    if (xs.size() < 8) return RectI{0, 0, 0, 0};
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    const size_t n = xs.size();
    const size_t lo = (size_t)(trim * (double)(n - 1));
    const size_t hi = (size_t)((1.0 - trim) * (double)(n - 1));
    return RectI{xs[lo], ys[lo], xs[hi] + 1, ys[hi] + 1};
}

std::pair<int, double> classify_background(const Image& img) {
    std::vector<uint8_t> bgmask((size_t)img.height * img.width);
    int64_t n_bg = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const bool bg = !is_glyph_pixel(img.px(y, x));
            bgmask[(size_t)(y * img.width + x)] = bg;
            n_bg += bg;
        }
    if (n_bg < ((int64_t)img.height * img.width) / 4) return {-1, 1e9};
    int best = -1;
    double best_err = 1e9;
    for (int a = 0; a < kBackgrounds; ++a) {
        double err = 0.0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                if (!bgmask[(size_t)(y * img.width + x)]) continue;
                const float* p = img.px(y, x);
                const double gray = (p[0] + p[1] + p[2]) / 3.0;
                err += std::abs(gray - background_value(a, x, y));
            }
        err /= (double)n_bg;
        if (err < best_err) {
            best_err = err;
            best = a;
        }
    }
    return {best, best_err};
}

std::string scene_to_json(const SceneSpec& spec, const std::string& image_path,
                          const std::array<Point2, kNumKeypoints>& keypoints) {
    json j;
    j["identity_id"] = spec.identity_id;
    j["bbox"] = {spec.face_bbox.x0, spec.face_bbox.y0, spec.face_bbox.x1, spec.face_bbox.y1};
    j["pose"] = spec.pose_angle;
    j["expr"] = spec.expression;
    j["bg"] = spec.background_attr;
    j["image"] = image_path;
    json kps = json::array();
    for (const auto& p : keypoints) kps.push_back({p.x, p.y});
    j["keypoints"] = kps;
    return j.dump();
}

Dataset generate_dataset(const std::string& dir, const DatasetMeta& meta) {
    Dataset ds;
    ds.meta = meta;
    ds.root = dir;
    ds.bank = make_identity_bank(meta.world.n_identities, meta.bank_seed,
                                 meta.world.separation_margin);
    Rng rng(meta.scene_seed ^ 0x5CE4E5EEDull);
    ds.scenes.reserve((size_t)meta.n_scenes);
    for (int i = 0; i < meta.n_scenes; ++i)
        ds.scenes.push_back(
            sample_scene_spec(ds.bank, meta.world.image_size, meta.size_lo, meta.size_hi, rng));

    fs::create_directories(fs::path(dir) / "images");
    ds.image_paths.resize((size_t)meta.n_scenes);
    for (int i = 0; i < meta.n_scenes; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "images/%06d.png", i);
        ds.image_paths[(size_t)i] = buf;
    }
    parallel_for(meta.n_scenes, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const RenderResult r = render_scene(ds.scenes[(size_t)i], ds.bank);
            write_png((fs::path(dir) / ds.image_paths[(size_t)i]).string(), r.image);
        }
    });

    std::ofstream jsonl(fs::path(dir) / "annotations.jsonl");
    if (!jsonl) throw std::runtime_error("cannot write annotations.jsonl in " + dir);
    for (int i = 0; i < meta.n_scenes; ++i) {
        const RenderResult r = render_scene(ds.scenes[(size_t)i], ds.bank);
        jsonl << scene_to_json(ds.scenes[(size_t)i], ds.image_paths[(size_t)i], r.keypoints)
              << "\n";
    }

    json mj;
    mj["image_size"] = meta.world.image_size;
    mj["n_identities"] = meta.world.n_identities;
    mj["separation_margin"] = meta.world.separation_margin;
    mj["n_backgrounds"] = meta.world.n_backgrounds;
    mj["bank_seed"] = meta.bank_seed;
    mj["scene_seed"] = meta.scene_seed;
    mj["size_lo"] = meta.size_lo;
    mj["size_hi"] = meta.size_hi;
    mj["n_scenes"] = meta.n_scenes;
    json ids = json::array();
    for (const auto& card : ds.bank) {
        json c;
        c["id"] = card.identity_id;
        c["shape"] = card.shape;
        c["palette"] = card.palette;
        ids.push_back(c);
    }
    mj["identities"] = ids;
    std::ofstream mf(fs::path(dir) / "meta.json");
    mf << mj.dump(2) << "\n";
    return ds;
}

Dataset Dataset::load(const std::string& dir) {
    Dataset ds;
    ds.root = dir;
    std::ifstream mf(fs::path(dir) / "meta.json");
    if (!mf) throw std::runtime_error("missing meta.json in " + dir);
    json mj = json::parse(mf);
    ds.meta.world.image_size = mj["image_size"];
    ds.meta.world.n_identities = mj["n_identities"];
    ds.meta.world.separation_margin = mj["separation_margin"];
    ds.meta.world.n_backgrounds = mj["n_backgrounds"];
    ds.meta.bank_seed = mj["bank_seed"];
    ds.meta.scene_seed = mj["scene_seed"];
    ds.meta.size_lo = mj["size_lo"];
    ds.meta.size_hi = mj["size_hi"];
    ds.meta.n_scenes = mj["n_scenes"];
    for (const auto& c : mj["identities"]) {
        IdentityCard card;
        card.identity_id = c["id"];
        for (int i = 0; i < kShapeParams; ++i) card.shape[(size_t)i] = c["shape"][(size_t)i];
        for (int i = 0; i < 3; ++i) card.palette[(size_t)i] = c["palette"][(size_t)i];
        ds.bank.push_back(card);
    }

    std::ifstream jsonl(fs::path(dir) / "annotations.jsonl");
    if (!jsonl) throw std::runtime_error("missing annotations.jsonl in " + dir);
    std::string line;
    while (std::getline(jsonl, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        SceneSpec spec;
        spec.identity_id = j["identity_id"];
        spec.face_bbox = RectI{j["bbox"][0], j["bbox"][1], j["bbox"][2], j["bbox"][3]};
        spec.pose_angle = j["pose"];
        spec.expression = j["expr"];
        spec.background_attr = j["bg"];
        spec.image_size = ds.meta.world.image_size;
        ds.scenes.push_back(spec);
        ds.image_paths.push_back(j["image"]);
    }
    return ds;
}

}  // namespace glyphdiff
