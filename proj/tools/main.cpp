#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "glyphdiff/evalsuite.hpp"
#include "glyphdiff/hash.hpp"
#include "glyphdiff/inference.hpp"
#include "glyphdiff/oracle.hpp"
#include "glyphdiff/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace glyphdiff;

namespace {

RectI parse_bbox(const std::string& s) {
    RectI r;
    if (std::sscanf(s.c_str(), "%d,%d,%d,%d", &r.x0, &r.y0, &r.x1, &r.y1) != 4)
        throw CLI::ValidationError("--bbox expects x0,y0,x1,y1");
    return r;
}

int run_dataset_gen(const std::string& out_dir, int n_scenes, int n_identities, double size_lo,
                    double size_hi, uint64_t seed, int image_size) {
    DatasetMeta meta;
    meta.world.image_size = image_size;
    meta.world.n_identities = n_identities;
    meta.n_scenes = n_scenes;
    meta.size_lo = size_lo;
    meta.size_hi = size_hi;
    meta.bank_seed = seed;
    meta.scene_seed = seed + 1;
    const Dataset ds = generate_dataset(out_dir, meta);
    std::printf("dataset: %d scenes, %d identities -> %s\n", (int)ds.scenes.size(),
                (int)ds.bank.size(), out_dir.c_str());
    return 0;
}

int run_oracle_train(const std::string& data_dir, const std::string& out_path, uint64_t seed,
                     int max_steps) {
    const Dataset ds = Dataset::load(data_dir);
    OracleConfig cfg;
    cfg.n_classes = ds.meta.world.n_identities;
    cfg.seed = seed;
    if (max_steps > 0) cfg.max_steps = max_steps;
    const OracleModel oracle =
        train_identity_oracle(ds, cfg, out_path + ".train_log.csv");
    oracle.save(out_path);
    std::printf("oracle: heldout top1 %.4f pose_mae %.4f expr_mae %.4f -> %s\n",
                oracle.heldout_acc, oracle.pose_mae, oracle.expr_mae, out_path.c_str());
    return 0;
}

int run_oracle_verify(const std::string& model_path, const std::string& data_dir) {
    const OracleModel oracle = OracleModel::load(model_path, /*verify=*/true);
    std::printf("oracle probe gates passed (top1 gate %.2f)\n", oracle.cfg.acc_gate);
    if (!data_dir.empty()) {
        const Dataset ds = Dataset::load(data_dir);
        int correct = 0;
        const int n = std::min<int>(512, (int)ds.scenes.size());
        for (int i = 0; i < n; ++i) {
            const RenderResult r = ds.render((size_t)i);
            const OracleEval ev = oracle.evaluate(r.image, ds.scenes[(size_t)i].face_bbox);
            int argmax = 0;
            for (size_t c = 1; c < ev.probs.size(); ++c)
                if (ev.probs[c] > ev.probs[(size_t)argmax]) argmax = (int)c;
            correct += argmax == ds.scenes[(size_t)i].identity_id;
        }
        std::printf("dataset check: top1 %.4f over %d scenes\n", (double)correct / n, n);
    }
    return 0;
}

int run_base_pretrain(const std::string& data_dir, const std::string& out_path, uint64_t seed,
                      int max_steps, int batch_size) {
    const Dataset ds = Dataset::load(data_dir);
    ModelConfig mc = default_model_config();
    mc.image_size = ds.meta.world.image_size;
    mc.denoiser.latent_hw = mc.image_size / mc.patch;
    BaseModel base;
    base.init(mc, seed);
    PretrainConfig pc;
    pc.seed = seed;
    if (max_steps > 0) pc.max_steps = max_steps;
    if (batch_size > 0) pc.batch_size = batch_size;
    const PretrainResult r = pretrain_base(base, ds, pc, out_path + ".train_log.csv");
    json extra;
    extra["init_val_loss"] = r.init_val_loss;
    extra["final_val_loss"] = r.final_val_loss;
    extra["pretrain_steps"] = pc.max_steps;
    base.save(out_path, extra.dump());
    std::printf("base: val loss %.5f -> %.5f, hash %s -> %s\n", r.init_val_loss, r.final_val_loss,
                hash_hex(base.weights_hash()).c_str(), out_path.c_str());
    return 0;
}

int run_train(const std::string& data_dir, const std::string& base_path,
              const std::string& out_path, const std::string& config_path,
              const std::string& resume_path) {
    const Dataset ds = Dataset::load(data_dir);
    TrainedModel model;
    TrainState state;
    if (!resume_path.empty()) {
        LoadedCheckpoint ck = load_checkpoint(resume_path);
        model = std::move(ck.model);
        state = std::move(ck.state);
        std::printf("resuming from step %lld\n", (long long)state.step);
    } else {
        model.base = BaseModel::load(base_path);
        model.data_meta = ds.meta;
        state.cfg = config_path.empty() ? TrainConfig{} : TrainConfig::from_file(config_path);
        model.init_branches(state.cfg.seed);
        state.rng.reseed(state.cfg.seed ^ 0x7124177ull);
    }
    BranchTrainer trainer(model, ds, std::move(state));
    trainer.run(out_path + ".train_log.csv");
    save_checkpoint(model, trainer.state(), out_path);
    std::printf("trained %lld steps (loss %.5f) -> %s\n", (long long)trainer.state().step,
                trainer.state().last_loss, out_path.c_str());
    return 0;
}

struct GenArgs {
    std::string ckpt, out_png = "out.png", pose_from;
    std::vector<int> ref_ids;
    std::vector<std::string> bboxes;
    std::vector<double> poses, exprs;
    int bg = 0;
    uint64_t seed = 0;
    double lambda_t = 7.5, lambda_i = 5.0, delay = 0.2;
    int steps = 30;
};

int run_generate(const GenArgs& a) {
    LoadedCheckpoint ck = load_checkpoint(a.ckpt);
    TrainedModel& model = ck.model;
    const ModelConfig& mc = model.base.cfg;
    const auto bank = make_identity_bank(model.data_meta.world.n_identities,
                                         model.data_meta.bank_seed,
                                         model.data_meta.world.separation_margin);
    if (a.ref_ids.empty()) throw std::runtime_error("need at least one --ref-id");
    if (a.bboxes.size() != a.ref_ids.size())
        throw std::runtime_error("need one --bbox per --ref-id");

    // optional keypoint borrowing from another scene's annotation line
    std::optional<std::array<Point2, kNumKeypoints>> borrowed;
    std::optional<RectI> borrowed_sq;
    if (!a.pose_from.empty()) {
        std::ifstream f(a.pose_from);
        if (!f) throw std::runtime_error("cannot open " + a.pose_from);
        json j = json::parse(f);
        std::array<Point2, kNumKeypoints> kps;
        for (int i = 0; i < kNumKeypoints; ++i)
            kps[(size_t)i] = {j["keypoints"][(size_t)i][0], j["keypoints"][(size_t)i][1]};
        const RectI bb{j["bbox"][0], j["bbox"][1], j["bbox"][2], j["bbox"][3]};
        borrowed = kps;
        borrowed_sq = square_bbox(bb, mc.image_size);
    }

    Rng rng(a.seed ^ 0x6E4EA7E5ull);
    std::vector<PersonConditionPack> packs;
    for (size_t i = 0; i < a.ref_ids.size(); ++i) {
        const int id = a.ref_ids[i];
        if (id < 0 || id >= (int)bank.size())
            throw std::runtime_error("--ref-id outside identity bank");
        const RectI bbox = parse_bbox(a.bboxes[i]);

        SceneSpec target;
        target.image_size = mc.image_size;
        target.identity_id = id;
        target.face_bbox = bbox;
        target.pose_angle = i < a.poses.size() ? a.poses[i] : rng.uniform(-1.0, 1.0) * M_PI / 3.0;
        target.expression = i < a.exprs.size() ? a.exprs[i] : rng.uniform();
        target.background_attr = a.bg;

        // deterministic reference scene for this identity
        SceneSpec ref;
        ref.image_size = mc.image_size;
        ref.identity_id = id;
        const int side = (int)std::lround(0.45 * mc.image_size);
        const int off = (mc.image_size - side) / 2;
        ref.face_bbox = RectI{off, off, off + side, off + side};
        ref.pose_angle = rng.uniform(-0.5, 0.5);
        ref.expression = rng.uniform();
        ref.background_attr = (int)rng.uniform_int(n_background_attrs());
        const RenderResult rr = render_scene(ref, bank);

        std::array<Point2, kNumKeypoints> kps;
        if (borrowed) {
            // map borrowed keypoints from their square frame into the target's
            const RectI tsq = square_bbox(bbox, mc.image_size);
            const double s = (double)tsq.width() / borrowed_sq->width();
            for (int k = 0; k < kNumKeypoints; ++k)
                kps[(size_t)k] = {tsq.x0 + ((*borrowed)[(size_t)k].x - borrowed_sq->x0) * s,
                                  tsq.y0 + ((*borrowed)[(size_t)k].y - borrowed_sq->y0) * s};
        } else {
            kps = scene_keypoints(target);
        }
        packs.push_back(build_pack(model, rr.image, rr.glyph_alpha, ref.face_bbox, bbox, kps, id));
    }

    GuidanceConfig g;
    g.lambda_t = a.lambda_t;
    g.lambda_i = a.lambda_i;
    g.delay_fraction = a.delay;
    g.steps = a.steps;
    g.seed = a.seed;
    const GenerationResult res = generate(model, packs, a.bg, g);
    write_png(a.out_png, res.image);
    std::ofstream prov(a.out_png + ".json");
    prov << res.provenance_json << "\n";
    std::printf("generated -> %s\n", a.out_png.c_str());
    return 0;
}

struct EvalArgs {
    std::string ckpt, wo_local, wo_global, oracle_path, out_dir = "eval_out";
    int n = 200;
    uint64_t seed = 0;
    bool do_assert = false;
    bool overlap = false;
};

int run_eval(const std::string& mode, const EvalArgs& a) {
    OracleModel oracle = OracleModel::load(a.oracle_path, /*verify=*/true);
    GuidanceConfig g;
    bool ok = true;

    if (mode == "identity") {
        LoadedCheckpoint ck = load_checkpoint(a.ckpt);
        const std::vector<double> bins = {1.0 / 4, 1.0 / 5, 1.0 / 6, 1.0 / 7};
        EvalReport rep = eval_identity(ck.model, oracle, bins, a.n, a.seed, g);
        rep.save(a.out_dir, "identity");
        std::printf("%s", rep.to_csv().c_str());
        if (a.do_assert) {
            const double drop = rep.rows.front().identity_top1 - rep.rows.back().identity_top1;
            ok = drop <= 0.15;
            std::printf("assert scale drop <= 0.15: %.4f -> %s\n", drop, ok ? "pass" : "FAIL");
        }
    } else if (mode == "control") {
        LoadedCheckpoint ck = load_checkpoint(a.ckpt);
        ScenarioConfig sc;
        sc.label = "control";
        sc.n = a.n;
        sc.seed = a.seed;
        const auto records = run_generation_scenario(ck.model, oracle, sc, g);
        EvalReport rep;
        rep.rows.push_back(summarize_records("control", "0.2500-0.5000", records));
        emit_figures(rep, records, a.out_dir, "control");
        std::printf("%s", rep.to_csv().c_str());
        if (a.do_assert) {
            const EvalRow& r = rep.rows[0];
            const bool iou_ok = r.location_iou >= 0.5;
            const bool pose_ok = r.pose_mae_rad <= 2.0 * oracle.pose_mae;
            const bool expr_ok = r.expr_mae <= 2.0 * oracle.expr_mae;
            ok = iou_ok && pose_ok && expr_ok;
            std::printf("assert iou>=0.5: %s, pose<=2x oracle: %s, expr<=2x oracle: %s\n",
                        iou_ok ? "pass" : "FAIL", pose_ok ? "pass" : "FAIL",
                        expr_ok ? "pass" : "FAIL");
        }
    } else if (mode == "ablation") {
        if (a.wo_local.empty() || a.wo_global.empty())
            throw std::runtime_error("ablation needs --wo-local and --wo-global checkpoints");
        LoadedCheckpoint full = load_checkpoint(a.ckpt);
        LoadedCheckpoint wol = load_checkpoint(a.wo_local);
        LoadedCheckpoint wog = load_checkpoint(a.wo_global);
        AblationResult res =
            eval_ablation(full.model, wol.model, wog.model, oracle, a.n, a.seed, g);
        res.report.save(a.out_dir, "ablation");
        std::printf("%s", res.report.to_csv().c_str());
        std::printf("p(full > wo_local) = %.5f\n", res.p_full_vs_wo_local);
        if (a.do_assert) {
            ok = res.p_full_vs_wo_local < 0.05;
            std::printf("assert p < 0.05: %s\n", ok ? "pass" : "FAIL");
        }
    } else if (mode == "multi") {
        LoadedCheckpoint ck = load_checkpoint(a.ckpt);
        MultiPersonResult res =
            eval_multiperson(ck.model, oracle, a.n, a.overlap, a.seed, g);
        res.report.save(a.out_dir, a.overlap ? "multi_overlap" : "multi");
        std::printf("%s", res.report.to_csv().c_str());
        if (a.do_assert && !a.overlap) {
            const double single = res.report.rows[2].identity_top1;
            const double d0 = std::abs(res.report.rows[0].identity_top1 - single);
            const double d1 = std::abs(res.report.rows[1].identity_top1 - single);
            ok = d0 <= 0.10 && d1 <= 0.10;
            std::printf("assert per-person within 10pp of single (%.3f/%.3f vs %.3f): %s\n",
                        res.report.rows[0].identity_top1, res.report.rows[1].identity_top1,
                        single, ok ? "pass" : "FAIL");
        }
    } else {
        throw std::runtime_error("unknown eval mode " + mode);
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-branch identity-conditioned diffusion on synthetic glyph scenes"};
    app.require_subcommand(1);

    // dataset gen
    auto* dataset = app.add_subcommand("dataset", "synthetic dataset tools");
    auto* gen = dataset->add_subcommand("gen", "generate scenes, PNGs and annotations");
    std::string out_dir = "data";
    int n_scenes = 20000, n_identities = 64, image_size = 64;
    double size_lo = 1.0 / 7.0, size_hi = 0.5;
    uint64_t seed = 0;
    gen->add_option("--out", out_dir);
    gen->add_option("--n-scenes", n_scenes);
    gen->add_option("--n-identities", n_identities);
    gen->add_option("--size-lo", size_lo);
    gen->add_option("--size-hi", size_hi);
    gen->add_option("--seed", seed);
    gen->add_option("--image-size", image_size);

    // oracle train/verify
    auto* oracle_cmd = app.add_subcommand("oracle", "identity oracle");
    auto* otrain = oracle_cmd->add_subcommand("train", "train the oracle");
    std::string data_dir = "data", oracle_out = "artifacts/oracle.nt";
    uint64_t oseed = 0;
    int osteps = 0;
    otrain->add_option("--data", data_dir);
    otrain->add_option("--out", oracle_out);
    otrain->add_option("--seed", oseed);
    otrain->add_option("--max-steps", osteps);
    auto* overify = oracle_cmd->add_subcommand("verify", "re-check oracle gates");
    std::string oracle_model = "artifacts/oracle.nt", verify_data;
    overify->add_option("--model", oracle_model);
    overify->add_option("--data", verify_data);

    // base pretrain
    auto* base_cmd = app.add_subcommand("base", "frozen base model");
    auto* pretrain = base_cmd->add_subcommand("pretrain", "pretrain the base denoiser");
    std::string base_out = "artifacts/base.nt";
    uint64_t bseed = 0;
    int bsteps = 0, bbatch = 0;
    pretrain->add_option("--data", data_dir);
    pretrain->add_option("--out", base_out);
    pretrain->add_option("--seed", bseed);
    pretrain->add_option("--max-steps", bsteps);
    pretrain->add_option("--batch-size", bbatch);

    // train
    auto* train_cmd = app.add_subcommand("train", "train branches + projection");
    std::string base_path = "artifacts/base.nt", train_out = "artifacts/model.nt";
    std::string train_config, resume;
    train_cmd->add_option("--data", data_dir);
    train_cmd->add_option("--base", base_path);
    train_cmd->add_option("--out", train_out);
    train_cmd->add_option("--config", train_config);
    train_cmd->add_option("--resume", resume);

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "sample images from a trained model");
    GenArgs ga;
    gen_cmd->add_option("--ckpt", ga.ckpt)->required();
    gen_cmd->add_option("--ref-id", ga.ref_ids);
    gen_cmd->add_option("--bbox", ga.bboxes);
    gen_cmd->add_option("--pose", ga.poses);
    gen_cmd->add_option("--expr", ga.exprs);
    gen_cmd->add_option("--bg", ga.bg);
    gen_cmd->add_option("--seed", ga.seed);
    gen_cmd->add_option("--out", ga.out_png);
    gen_cmd->add_option("--pose-from", ga.pose_from);
    gen_cmd->add_option("--lambda-t", ga.lambda_t);
    gen_cmd->add_option("--lambda-i", ga.lambda_i);
    gen_cmd->add_option("--delay", ga.delay);
    gen_cmd->add_option("--steps", ga.steps);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluation protocols");
    EvalArgs ea;
    std::string eval_mode;
    eval_cmd->add_option("mode", eval_mode, "identity|control|ablation|multi")->required();
    eval_cmd->add_option("--ckpt", ea.ckpt);
    eval_cmd->add_option("--wo-local", ea.wo_local);
    eval_cmd->add_option("--wo-global", ea.wo_global);
    eval_cmd->add_option("--oracle", ea.oracle_path);
    eval_cmd->add_option("--n", ea.n);
    eval_cmd->add_option("--seed", ea.seed);
    eval_cmd->add_option("--out", ea.out_dir);
    eval_cmd->add_flag("--assert", ea.do_assert);
    eval_cmd->add_flag("--overlap", ea.overlap);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return run_dataset_gen(out_dir, n_scenes, n_identities, size_lo, size_hi, seed,
                                   image_size);
        if (otrain->parsed()) return run_oracle_train(data_dir, oracle_out, oseed, osteps);
        if (overify->parsed()) return run_oracle_verify(oracle_model, verify_data);
        if (pretrain->parsed()) return run_base_pretrain(data_dir, base_out, bseed, bsteps, bbatch);
        if (train_cmd->parsed())
            return run_train(data_dir, base_path, train_out, train_config, resume);
        if (gen_cmd->parsed()) return run_generate(ga);
        if (eval_cmd->parsed()) return run_eval(eval_mode, ea);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
