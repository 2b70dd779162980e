#include "glyphdiff/evalsuite.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "glyphdiff/hash.hpp"
#include "glyphdiff/parallel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace glyphdiff {

// --- statistics ------------------------------------------------------------------

WilsonInterval wilson_interval(int k, int n, double z) {
    if (n <= 0) return {0.0, 1.0};
    const double p = (double)k / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = p + z2 / (2.0 * n);
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    return {std::max(0.0, (center - half) / denom), std::min(1.0, (center + half) / denom)};
}

static double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double two_proportion_p_value(int k1, int n1, int k2, int n2) {
    if (n1 <= 0 || n2 <= 0) return 1.0;
    const double p1 = (double)k1 / n1, p2 = (double)k2 / n2;
    const double pooled = (double)(k1 + k2) / (n1 + n2);
    const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2));
    if (se == 0.0) return p1 > p2 ? 0.0 : 1.0;
    const double z = (p1 - p2) / se;
    return 1.0 - normal_cdf(z);
}

double binomial_test_two_sided(int k, int n, double p0) {
    auto log_pmf = [&](int i) {
        return std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
               i * std::log(p0) + (n - i) * std::log(1.0 - p0);
    };
    const double lk = log_pmf(k);
    double p = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double li = log_pmf(i);
        if (li <= lk + 1e-9) p += std::exp(li);
    }
    return std::min(p, 1.0);
}

// --- report ----------------------------------------------------------------------

const char* const kEvalCsvHeader =
    "scenario,relative_size_bin,identity_top1,identity_margin,location_iou,pose_mae_rad,"
    "expr_mae,n_samples";

std::string EvalReport::to_csv() const {
    std::string out = std::string(kEvalCsvHeader) + "\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n",
                      r.scenario.c_str(), r.size_bin.c_str(), r.identity_top1, r.identity_margin,
                      r.location_iou, r.pose_mae_rad, r.expr_mae, r.n_samples);
        out += buf;
    }
    return out;
}

void EvalReport::save(const std::string& dir, const std::string& name) const {
    fs::create_directories(dir);
    std::ofstream csv(fs::path(dir) / (name + ".csv"));
    csv << to_csv();
    json j;
    j["config_digest"] = config_digest;
    j["model_digest"] = model_digest;
    json intervals = json::array();
    for (const auto& r : rows)
        intervals.push_back({{"scenario", r.scenario},
                             {"size_bin", r.size_bin},
                             {"top1_wilson_lo", r.top1_ci.lo},
                             {"top1_wilson_hi", r.top1_ci.hi}});
    j["top1_intervals"] = intervals;
    std::ofstream meta(fs::path(dir) / (name + ".json"));
    meta << j.dump(2) << "\n";
}

// --- scenario running ---------------------------------------------------------------

namespace {

SceneSpec sample_target_spec(const std::vector<IdentityCard>& bank, int image_size,
                             const ScenarioConfig& sc, Rng& rng) {
    if (!sc.point_ratio) return sample_scene_spec(bank, image_size, sc.size_lo, sc.size_hi, rng);
    // point bin: exact rounded side, square bbox
    const int side = std::max(1, (int)std::lround(*sc.point_ratio * image_size));
    SceneSpec spec;
    spec.image_size = image_size;
    spec.identity_id = (int)rng.uniform_int((int64_t)bank.size());
    const int x0 = (int)rng.uniform_int(image_size - side + 1);
    const int y0 = (int)rng.uniform_int(image_size - side + 1);
    spec.face_bbox = RectI{x0, y0, x0 + side, y0 + side};
    spec.pose_angle = rng.uniform(-M_PI / 3.0, M_PI / 3.0);
    spec.expression = rng.uniform();
    spec.background_attr = (int)rng.uniform_int(n_background_attrs());
    return spec;
}

SceneSpec sample_reference_spec(const std::vector<IdentityCard>& bank, int image_size,
                                int identity, Rng& rng) {
    SceneSpec spec = sample_scene_spec(bank, image_size, 0.40, 0.48, rng);
    spec.identity_id = identity;
    (void)bank;
    return spec;
}

RectI latent_rect_in_pixels(const RectI& square_px, int image_size, int latent_hw) {
    const RectI lat = scale_rect_outward(square_px, image_size, latent_hw);
    const int f = image_size / latent_hw;
    return RectI{lat.x0 * f, lat.y0 * f, lat.x1 * f, lat.y1 * f};
}

// IoU of the requested face rect against the glyph detected inside a dilated
// window (windowing keeps multi-person scenes per-slot measurable)
double detection_iou(const Image& img, const RectI& square_px, int image_size, int latent_hw) {
    const int side = square_px.width();
    const int margin = std::max(4, side / 2);
    RectI win{std::max(0, square_px.x0 - margin), std::max(0, square_px.y0 - margin),
              std::min(image_size, square_px.x1 + margin), std::min(image_size, square_px.y1 + margin)};
    const Image sub = crop(img, win);
    RectI det = detect_glyph_bbox(sub);
    if (det.empty()) return 0.0;  // detection failure counts as IoU 0
    det = RectI{det.x0 + win.x0, det.y0 + win.y0, det.x1 + win.x0, det.y1 + win.y0};
    const RectI requested = latent_rect_in_pixels(square_px, image_size, latent_hw);
    return rect_iou(requested, det);
}

SampleRecord evaluate_generation(TrainedModel& model, const OracleModel& oracle,
                                 const SceneSpec& target, const Image& generated) {
    const ModelConfig& mc = model.base.cfg;
    SampleRecord rec;
    rec.target = target;
    rec.generated = generated;
    rec.requested_identity = target.identity_id;

    const RectI sq = square_bbox(target.face_bbox, mc.image_size);
    const OracleEval ev = oracle.evaluate(generated, sq);
    int argmax = 0;
    for (size_t c = 1; c < ev.probs.size(); ++c)
        if (ev.probs[c] > ev.probs[(size_t)argmax]) argmax = (int)c;
    rec.oracle_argmax = argmax;
    double best_other = 0.0;
    for (size_t c = 0; c < ev.probs.size(); ++c)
        if ((int)c != target.identity_id) best_other = std::max(best_other, ev.probs[c]);
    rec.margin = ev.probs[(size_t)target.identity_id] - best_other;
    rec.iou = detection_iou(generated, sq, mc.image_size, mc.denoiser.latent_hw);
    rec.pose_err = std::abs(ev.pose - target.pose_angle);
    rec.expr_err = std::abs(ev.expr - target.expression);
    return rec;
}

}  // namespace

std::vector<SampleRecord> run_generation_scenario(TrainedModel& model, const OracleModel& oracle,
                                                  const ScenarioConfig& sc,
                                                  const GuidanceConfig& gcfg) {
    const ModelConfig& mc = model.base.cfg;
    const auto bank = make_identity_bank(model.data_meta.world.n_identities,
                                         model.data_meta.bank_seed,
                                         model.data_meta.world.separation_margin);
    std::vector<SampleRecord> records((size_t)sc.n);
    Fnv1a64 label_hash;
    label_hash.update_str(sc.label);
    Rng scenario_rng(sc.seed ^ label_hash.digest());
    std::vector<uint64_t> sample_seeds((size_t)sc.n);
    for (auto& s : sample_seeds) s = scenario_rng.next_u64();

    parallel_for(sc.n, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            Rng rng(sample_seeds[(size_t)i]);
            const SceneSpec target = sample_target_spec(bank, mc.image_size, sc, rng);
            const SceneSpec ref =
                sample_reference_spec(bank, mc.image_size, target.identity_id, rng);
            const RenderResult ref_render = render_scene(ref, bank);

            PersonConditionPack pack =
                build_pack(model, ref_render.image, ref_render.glyph_alpha, ref.face_bbox,
                           target.face_bbox, scene_keypoints(target), target.identity_id);

            GuidanceConfig g = gcfg;
            g.seed = rng.next_u64();
            const GenerationResult gen =
                generate(model, {pack}, target.background_attr, g);

            records[(size_t)i] = evaluate_generation(model, oracle, target, gen.image);
            records[(size_t)i].reference = ref_render.image;
            records[(size_t)i].pe_map = pack.c_pe.map;
            records[(size_t)i].loc_mask = pack.loc.mask_latent;
        }
    });
    return records;
}

EvalRow summarize_records(const std::string& scenario, const std::string& size_bin,
                          const std::vector<SampleRecord>& records) {
    EvalRow row;
    row.scenario = scenario;
    row.size_bin = size_bin;
    row.n_samples = (int)records.size();
    if (records.empty()) return row;
    int correct = 0;
    double margin = 0.0, iou = 0.0, pose = 0.0, expr = 0.0;
    for (const auto& r : records) {
        correct += r.oracle_argmax == r.requested_identity;
        margin += r.margin;
        iou += r.iou;
        pose += r.pose_err;
        expr += r.expr_err;
    }
    const double n = (double)records.size();
    row.identity_top1 = correct / n;
    row.identity_margin = margin / n;
    row.location_iou = iou / n;
    row.pose_mae_rad = pose / n;
    row.expr_mae = expr / n;
    row.top1_ci = wilson_interval(correct, (int)records.size());
    return row;
}

static std::string model_digest_of(TrainedModel& model) {
    Fnv1a64 h;
    model.visit_all([&](Param& p) {
        h.update_str(p.name);
        h.update_tensor(p.value);
    });
    return hash_hex(h.digest());
}

static std::string config_digest_of(const ScenarioConfig& sc, const GuidanceConfig& g) {
    Fnv1a64 h;
    h.update_str(sc.label);
    h.update(&sc.size_lo, sizeof(sc.size_lo));
    h.update(&sc.size_hi, sizeof(sc.size_hi));
    h.update(&sc.n, sizeof(sc.n));
    h.update(&sc.seed, sizeof(sc.seed));
    h.update(&g.lambda_t, sizeof(g.lambda_t));
    h.update(&g.lambda_i, sizeof(g.lambda_i));
    h.update(&g.delay_fraction, sizeof(g.delay_fraction));
    h.update(&g.steps, sizeof(g.steps));
    return hash_hex(h.digest());
}

EvalReport eval_identity(TrainedModel& model, const OracleModel& oracle,
                         const std::vector<double>& point_bins, int n, uint64_t seed,
                         const GuidanceConfig& gcfg) {
    oracle.verify_probe();
    EvalReport report;
    report.model_digest = model_digest_of(model);
    for (double ratio : point_bins) {
        ScenarioConfig sc;
        sc.label = "identity";
        sc.point_ratio = ratio;
        sc.n = n;
        sc.seed = seed ^ (uint64_t)std::llround(ratio * 1e6);
        const auto records = run_generation_scenario(model, oracle, sc, gcfg);
        char bin[32];
        std::snprintf(bin, sizeof(bin), "%.4f", ratio);
        report.rows.push_back(summarize_records("identity", bin, records));
        report.config_digest = config_digest_of(sc, gcfg);
        std::fprintf(stderr, "[eval] identity bin %s: top1 %.3f margin %.3f iou %.3f\n", bin,
                     report.rows.back().identity_top1, report.rows.back().identity_margin,
                     report.rows.back().location_iou);
    }
    return report;
}

EvalReport eval_identity_range(TrainedModel& model, const OracleModel& oracle, double lo,
                               double hi, int n, uint64_t seed, const GuidanceConfig& gcfg,
                               const std::string& label) {
    oracle.verify_probe();
    ScenarioConfig sc;
    sc.label = label;
    sc.size_lo = lo;
    sc.size_hi = hi;
    sc.n = n;
    sc.seed = seed;
    const auto records = run_generation_scenario(model, oracle, sc, gcfg);
    EvalReport report;
    report.model_digest = model_digest_of(model);
    report.config_digest = config_digest_of(sc, gcfg);
    char bin[48];
    std::snprintf(bin, sizeof(bin), "%.4f-%.4f", lo, hi);
    report.rows.push_back(summarize_records(label, bin, records));
    return report;
}

EvalReport eval_control(TrainedModel& model, const OracleModel& oracle, int n, uint64_t seed,
                        const GuidanceConfig& gcfg) {
    EvalReport report = eval_identity_range(model, oracle, 0.25, 0.5, n, seed, gcfg, "control");
    return report;
}

AblationResult eval_ablation(TrainedModel& full, TrainedModel& wo_local, TrainedModel& wo_global,
                             const OracleModel& oracle, int n, uint64_t seed,
                             const GuidanceConfig& gcfg) {
    oracle.verify_probe();
    AblationResult out;
    ScenarioConfig sc;
    sc.label = "ablation";
    sc.size_lo = 1.0 / 7.0;
    sc.size_hi = 1.0 / 6.0;
    sc.n = n;
    sc.seed = seed;

    const auto rec_full = run_generation_scenario(full, oracle, sc, gcfg);
    const auto rec_wol = run_generation_scenario(wo_local, oracle, sc, gcfg);
    const auto rec_wog = run_generation_scenario(wo_global, oracle, sc, gcfg);
    out.report.model_digest = model_digest_of(full);
    out.report.config_digest = config_digest_of(sc, gcfg);
    out.report.rows.push_back(summarize_records("full", "small", rec_full));
    out.report.rows.push_back(summarize_records("wo_local", "small", rec_wol));
    out.report.rows.push_back(summarize_records("wo_global", "small", rec_wog));

    auto correct = [](const std::vector<SampleRecord>& rs) {
        int k = 0;
        for (const auto& r : rs) k += r.oracle_argmax == r.requested_identity;
        return k;
    };
    out.p_full_vs_wo_local =
        two_proportion_p_value(correct(rec_full), (int)rec_full.size(), correct(rec_wol),
                               (int)rec_wol.size());
    return out;
}

MultiPersonResult eval_multiperson(TrainedModel& model, const OracleModel& oracle, int n,
                                   bool overlap, uint64_t seed, const GuidanceConfig& gcfg) {
    oracle.verify_probe();
    const ModelConfig& mc = model.base.cfg;
    const auto bank = make_identity_bank(model.data_meta.world.n_identities,
                                         model.data_meta.bank_seed,
                                         model.data_meta.world.separation_margin);
    MultiPersonResult out;
    out.slot_records[0].resize((size_t)n);
    out.slot_records[1].resize((size_t)n);

    Rng scenario_rng(seed ^ 0x3417150Full ^ (overlap ? 0xFF : 0));
    std::vector<uint64_t> sample_seeds((size_t)n);
    for (auto& s : sample_seeds) s = scenario_rng.next_u64();

    parallel_for(n, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            Rng rng(sample_seeds[(size_t)i]);
            // two distinct identities, sizes in the 1/5..1/4 band
            SceneSpec t0, t1;
            for (int attempt = 0;; ++attempt) {
                t0 = sample_scene_spec(bank, mc.image_size, 0.20, 0.25, rng);
                t1 = sample_scene_spec(bank, mc.image_size, 0.20, 0.25, rng);
                if (t1.identity_id == t0.identity_id)
                    t1.identity_id = (t1.identity_id + 1) % (int)bank.size();
                const RectI s0 = square_bbox(t0.face_bbox, mc.image_size);
                const RectI s1 = square_bbox(t1.face_bbox, mc.image_size);
                const double iou = rect_iou(s0, s1);
                const bool ok = overlap ? (iou > 0.05 && iou < 0.5)
                                        : rect_intersection(s0, s1).empty();
                if (ok || attempt > 500) break;
            }
            t1.background_attr = t0.background_attr;  // one shared prompt

            std::vector<PersonConditionPack> packs;
            for (const SceneSpec* t : {&t0, &t1}) {
                const SceneSpec ref =
                    sample_reference_spec(bank, mc.image_size, t->identity_id, rng);
                const RenderResult rr = render_scene(ref, bank);
                packs.push_back(build_pack(model, rr.image, rr.glyph_alpha, ref.face_bbox,
                                           t->face_bbox, scene_keypoints(*t), t->identity_id));
            }
            GuidanceConfig g = gcfg;
            g.seed = rng.next_u64();
            const GenerationResult gen = generate(model, packs, t0.background_attr, g);
            out.slot_records[0][(size_t)i] = evaluate_generation(model, oracle, t0, gen.image);
            out.slot_records[1][(size_t)i] = evaluate_generation(model, oracle, t1, gen.image);
            out.slot_records[0][(size_t)i].pe_map = packs[0].c_pe.map;
            out.slot_records[0][(size_t)i].loc_mask = packs[0].loc.mask_latent;
        }
    });

    out.report.model_digest = model_digest_of(model);
    const char* kind = overlap ? "multi_overlap" : "multi";
    out.report.rows.push_back(
        summarize_records(std::string(kind) + "_p0", "0.20-0.25", out.slot_records[0]));
    out.report.rows.push_back(
        summarize_records(std::string(kind) + "_p1", "0.20-0.25", out.slot_records[1]));

    // single-pack control arm at matched size (pipeline consistency check)
    ScenarioConfig sc;
    sc.label = "multi_single_control";
    sc.size_lo = 0.20;
    sc.size_hi = 0.25;
    sc.n = n;
    sc.seed = seed ^ 0x51461Eull;
    const auto single = run_generation_scenario(model, oracle, sc, gcfg);
    out.report.rows.push_back(
        summarize_records(std::string(kind) + "_single_control", "0.20-0.25", single));
    return out;
}

void emit_figures(const EvalReport& report, const std::vector<SampleRecord>& records,
                  const std::string& dir, const std::string& name) {
    fs::create_directories(dir);
    report.save(dir, name);
    if (records.empty()) return;

    const int cell_h = 64, pane_w = 64;
    const int cols = std::max(1, (int)std::ceil(std::sqrt((double)records.size())));
    const int rows = (int)((records.size() + cols - 1) / cols);
    const int cell_w = 4 * pane_w + 6;
    Image sheet(rows * (cell_h + 2), cols * cell_w);

    auto blit = [&](const Image& src, int y0, int x0) {
        const Image r = resize_bilinear(src, cell_h, pane_w);
        for (int y = 0; y < r.height; ++y)
            for (int x = 0; x < r.width; ++x) {
                if (y0 + y >= sheet.height || x0 + x >= sheet.width) continue;
                std::copy_n(r.px(y, x), 3, sheet.px(y0 + y, x0 + x));
            }
    };

    for (size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        const int ry = (int)(i / (size_t)cols) * (cell_h + 2);
        const int rx = (int)(i % (size_t)cols) * cell_w;
        if (rec.reference.height > 0) blit(rec.reference, ry, rx);
        if (rec.pe_map.numel() > 0) {
            Image pe(rec.pe_map.dim(0), rec.pe_map.dim(1));
            for (int y = 0; y < pe.height; ++y)
                for (int x = 0; x < pe.width; ++x) {
                    const float* c =
                        rec.pe_map.ptr() + ((int64_t)y * pe.width + x) * kPoseExprChannels;
                    float* p = pe.px(y, x);
                    p[0] = std::min(1.0f, c[0] + c[3] * 0.5f);
                    p[1] = std::min(1.0f, c[1] + c[3] * 0.5f);
                    p[2] = std::min(1.0f, c[2] + c[3] * 0.5f);
                }
            blit(pe, ry, rx + pane_w + 2);
        }
        if (rec.loc_mask.height > 0) {
            Image lm(rec.loc_mask.height, rec.loc_mask.width);
            for (int y = 0; y < lm.height; ++y)
                for (int x = 0; x < lm.width; ++x) {
                    float* p = lm.px(y, x);
                    p[0] = p[1] = p[2] = rec.loc_mask.at(y, x);
                }
            blit(lm, ry, rx + 2 * (pane_w + 2));
        }
        if (rec.generated.height > 0) blit(rec.generated, ry, rx + 3 * (pane_w + 2));
    }
    write_png((fs::path(dir) / (name + "_sheet.png")).string(), sheet);
}

}  // namespace glyphdiff
