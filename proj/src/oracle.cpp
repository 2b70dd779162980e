#include "glyphdiff/oracle.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "glyphdiff/conditions.hpp"
#include "glyphdiff/named_tensors.hpp"
#include "glyphdiff/parallel.hpp"
#include "glyphdiff/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace glyphdiff {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kPoseScale = kPi / 3.0;
constexpr uint64_t kProbeSeed = 0x96013Eull;
}  // namespace

void OracleNet::init(const std::string& prefix, int input_size_, int n_classes_, Rng& rng) {
    input_size = input_size_;
    n_classes = n_classes_;
    c1.init(prefix + ".c1", 3, 3, 24, 1, 1, rng);
    n1.init(prefix + ".n1", 24, 8);
    c2.init(prefix + ".c2", 3, 24, 32, 2, 1, rng);
    n2.init(prefix + ".n2", 32, 8);
    c3.init(prefix + ".c3", 3, 32, 48, 2, 1, rng);
    n3.init(prefix + ".n3", 48, 8);
    c4.init(prefix + ".c4", 3, 48, 64, 2, 1, rng);
    n4.init(prefix + ".n4", 64, 8);
    const int spatial = input_size / 8;
    fc.init(prefix + ".fc", spatial * spatial * 64, 128, rng);
    head_cls.init(prefix + ".cls", 128, n_classes, rng);
    head_reg.init(prefix + ".reg", 128, 2, rng);
}

std::pair<Var, Var> OracleNet::fwd(Tape& tp, Var crops) {
    const int n = tp.val(crops).dim(0);
    Var h = op_silu(tp, n1.fwd(tp, c1.fwd(tp, crops)));
    h = op_silu(tp, n2.fwd(tp, c2.fwd(tp, h)));
    h = op_silu(tp, n3.fwd(tp, c3.fwd(tp, h)));
    h = op_silu(tp, n4.fwd(tp, c4.fwd(tp, h)));
    const std::vector<int> hs = tp.val(h).shape;
    h = op_reshape(tp, h, {n, hs[1] * hs[2] * hs[3]});
    h = op_silu(tp, fc.fwd(tp, h));
    return {head_cls.fwd(tp, h), head_reg.fwd(tp, h)};
}

void OracleNet::visit(const ParamVisitor<float>& v) {
    c1.visit(v); n1.visit(v); c2.visit(v); n2.visit(v);
    c3.visit(v); n3.visit(v); c4.visit(v); n4.visit(v);
    fc.visit(v); head_cls.visit(v); head_reg.visit(v);
}

namespace {

Tensor crop_to_input(const Image& image, const RectI& sq, int input_size) {
    const Image c = resize_bilinear(crop(image, sq), input_size, input_size);
    Tensor t({1, input_size, input_size, 3});
    std::copy(c.data.begin(), c.data.end(), t.data.begin());
    return t;
}

struct EvalOut {
    std::vector<double> probs;
    double pose_norm, expr;
};

EvalOut run_net(const OracleNet& net, const Tensor& crops1) {
    Tape tp;
    tp.grad_enabled = false;
    Var x = tp.leaf(crops1);
    auto [logits, reg] = const_cast<OracleNet&>(net).fwd(tp, x);
    const Tensor& lv = tp.val(logits);
    const int v = lv.dim(1);
    EvalOut out;
    out.probs.resize((size_t)v);
    double mx = lv[0];
    for (int i = 1; i < v; ++i) mx = std::max(mx, (double)lv[i]);
    double sum = 0.0;
    for (int i = 0; i < v; ++i) {
        out.probs[(size_t)i] = std::exp((double)lv[i] - mx);
        sum += out.probs[(size_t)i];
    }
    for (auto& p : out.probs) p /= sum;
    out.pose_norm = tp.val(reg)[0];
    out.expr = tp.val(reg)[1];
    return out;
}

}  // namespace

OracleEval OracleModel::evaluate(const Image& image, const RectI& face_bbox) const {
    if (face_bbox.x0 < 0 || face_bbox.y0 < 0 || face_bbox.x1 > image.width ||
        face_bbox.y1 > image.height || face_bbox.empty())
        throw std::invalid_argument("oracle evaluate: bbox outside image");
    const RectI sq = square_bbox(face_bbox, std::min(image.width, image.height));
    return evaluate_crop(tensor_to_image(crop_to_input(image, sq, cfg.input_size)));
}

OracleEval OracleModel::evaluate_crop(const Image& crop32) const {
    if (crop32.height != cfg.input_size || crop32.width != cfg.input_size)
        throw std::invalid_argument("oracle evaluate_crop: wrong crop size");
    Tensor t({1, cfg.input_size, cfg.input_size, 3});
    std::copy(crop32.data.begin(), crop32.data.end(), t.data.begin());
    const EvalOut r = run_net(net, t);
    OracleEval out;
    out.probs = r.probs;
    out.pose = std::min(std::max(r.pose_norm, -1.0), 1.0) * kPoseScale;
    out.expr = std::min(std::max(r.expr, 0.0), 1.0);
    return out;
}

void OracleModel::save(const std::string& path) const {
    NamedTensors nt;
    const_cast<OracleModel*>(this)->net.visit([&](Param& p) { nt.put(p.name, p.value); });
    nt.save(path);
    json meta;
    meta["kind"] = "oracle";
    meta["input_size"] = cfg.input_size;
    meta["n_classes"] = cfg.n_classes;
    meta["acc_gate"] = cfg.acc_gate;
    meta["pose_mae_gate"] = cfg.pose_mae_gate;
    meta["expr_mae_gate"] = cfg.expr_mae_gate;
    meta["train_seed"] = train_seed;
    meta["heldout_acc"] = heldout_acc;
    meta["pose_mae"] = pose_mae;
    meta["expr_mae"] = expr_mae;
    meta["dataset_meta"] = json::parse(dataset_meta_to_json(data_meta));
    std::ofstream f(json_sidecar_path(path));
    f << meta.dump(2) << "\n";
}

OracleModel OracleModel::load(const std::string& path, bool verify) {
    std::ifstream f(json_sidecar_path(path));
    if (!f) throw std::runtime_error("missing oracle metadata sidecar for " + path);
    json meta = json::parse(f);
    if (meta["kind"] != "oracle") throw std::runtime_error(path + " is not an oracle model");

    OracleModel m;
    m.cfg.input_size = meta["input_size"];
    m.cfg.n_classes = meta["n_classes"];
    m.cfg.acc_gate = meta["acc_gate"];
    m.cfg.pose_mae_gate = meta["pose_mae_gate"];
    m.cfg.expr_mae_gate = meta["expr_mae_gate"];
    m.train_seed = meta["train_seed"];
    m.heldout_acc = meta["heldout_acc"];
    m.pose_mae = meta["pose_mae"];
    m.expr_mae = meta["expr_mae"];
    m.data_meta = dataset_meta_from_json(meta["dataset_meta"].dump());
    Rng rng(0);
    m.net.init("oracle", m.cfg.input_size, m.cfg.n_classes, rng);
    NamedTensors nt = NamedTensors::load(path);
    m.net.visit([&](Param& p) {
        const Tensor& t = nt.get(p.name);
        check_same_shape(p.value, t, p.name.c_str());
        p.value = t;
        p.trainable = false;
    });
    if (verify) m.verify_probe();
    return m;
}

void OracleModel::verify_probe() const {
    const auto bank = make_identity_bank(data_meta.world.n_identities, data_meta.bank_seed,
                                         data_meta.world.separation_margin);
    Rng rng(kProbeSeed);
    const int n_probe = 256;
    int correct = 0;
    double pose_err = 0.0, expr_err = 0.0;
    for (int i = 0; i < n_probe; ++i) {
        const SceneSpec spec = sample_scene_spec(bank, data_meta.world.image_size,
                                                 data_meta.size_lo, data_meta.size_hi, rng);
        const RenderResult r = render_scene(spec, bank);
        const OracleEval ev = evaluate(r.image, spec.face_bbox);
        int argmax = 0;
        for (size_t c = 1; c < ev.probs.size(); ++c)
            if (ev.probs[c] > ev.probs[(size_t)argmax]) argmax = (int)c;
        correct += argmax == spec.identity_id;
        pose_err += std::abs(ev.pose - spec.pose_angle);
        expr_err += std::abs(ev.expr - spec.expression);
    }
    const double acc = (double)correct / n_probe;
    const double pmae = pose_err / n_probe;
    const double emae = expr_err / n_probe;
    if (acc < cfg.acc_gate || pmae > cfg.pose_mae_gate || emae > cfg.expr_mae_gate)
        throw std::runtime_error(
            "oracle gate failure on probe set: top1=" + std::to_string(acc) +
            " pose_mae=" + std::to_string(pmae) + " expr_mae=" + std::to_string(emae) +
            " (gates " + std::to_string(cfg.acc_gate) + "/" + std::to_string(cfg.pose_mae_gate) +
            "/" + std::to_string(cfg.expr_mae_gate) + ")");
}

// --- training -------------------------------------------------------------------

namespace {

struct U8Image {
    int h = 0, w = 0;
    std::vector<uint8_t> data;

    static U8Image from(const Image& img) {
        U8Image u;
        u.h = img.height;
        u.w = img.width;
        u.data.resize(img.data.size());
        for (size_t i = 0; i < img.data.size(); ++i) {
            const float c = std::min(std::max(img.data[i], 0.0f), 1.0f);
            u.data[i] = (uint8_t)std::lround(c * 255.0f);
        }
        return u;
    }

    Image to_image() const {
        Image img(h, w);
        for (size_t i = 0; i < data.size(); ++i) img.data[i] = data[i] / 255.0f;
        return img;
    }
};

RectI jitter_square(const RectI& sq, int image_size, double amount, Rng& rng) {
    const int side = sq.width();
    const int max_shift = std::max(1, (int)std::lround(amount * side));
    const int dside = (int)rng.uniform_int(2 * max_shift + 1) - max_shift;
    const int dx = (int)rng.uniform_int(2 * max_shift + 1) - max_shift;
    const int dy = (int)rng.uniform_int(2 * max_shift + 1) - max_shift;
    int s = std::min(std::max(side + dside, 4), image_size);
    int x0 = std::min(std::max(sq.x0 + dx, 0), image_size - s);
    int y0 = std::min(std::max(sq.y0 + dy, 0), image_size - s);
    return RectI{x0, y0, x0 + s, y0 + s};
}

}  // namespace

OracleModel train_identity_oracle(const Dataset& data, const OracleConfig& cfg,
                                  const std::string& log_csv_path) {
    std::map<int, int> per_id;
    for (const auto& s : data.scenes) per_id[s.identity_id]++;
    for (int id = 0; id < data.meta.world.n_identities; ++id)
        if (per_id[id] < 50)
            throw std::invalid_argument("train_identity_oracle: identity " + std::to_string(id) +
                                        " has " + std::to_string(per_id[id]) +
                                        " crops; need >= 50 per identity");

    // cache dataset images quantized (matches the on-disk PNG payload)
    std::vector<U8Image> images(data.scenes.size());
    const bool from_disk = !data.root.empty() && fs::exists(fs::path(data.root) / "images");
    parallel_for((int64_t)data.scenes.size(), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            if (from_disk) {
                images[(size_t)i] = U8Image::from(
                    read_png((fs::path(data.root) / data.image_paths[(size_t)i]).string()));
            } else {
                images[(size_t)i] = U8Image::from(data.render((size_t)i).image);
            }
        }
    });

    OracleModel model;
    model.cfg = cfg;
    model.data_meta = data.meta;
    model.train_seed = cfg.seed;
    Rng init_rng(cfg.seed ^ 0x04AC1Eull);
    model.net.init("oracle", cfg.input_size, cfg.n_classes, init_rng);

    std::vector<Param*> params;
    model.net.visit([&](Param& p) { params.push_back(&p); });
    Optimizer opt;
    opt.cfg.lr = cfg.lr;
    opt.cfg.weight_decay = cfg.weight_decay;

    const size_t n_total = data.scenes.size();
    const size_t n_held = std::max<size_t>(256, n_total / 10);
    const size_t n_train = n_total - n_held;

    auto make_clean_crop = [&](size_t idx) {
        const SceneSpec& spec = data.scenes[idx];
        const RectI sq = square_bbox(spec.face_bbox, spec.image_size);
        return crop_to_input(images[idx].to_image(), sq, cfg.input_size);
    };

    auto heldout_metrics = [&](double* pose_mae, double* expr_mae) {
        int correct = 0;
        double pe = 0.0, ee = 0.0;
        for (size_t i = n_train; i < n_total; ++i) {
            const EvalOut r = run_net(model.net, make_clean_crop(i));
            int argmax = 0;
            for (size_t c = 1; c < r.probs.size(); ++c)
                if (r.probs[c] > r.probs[(size_t)argmax]) argmax = (int)c;
            correct += argmax == data.scenes[i].identity_id;
            pe += std::abs(std::min(std::max(r.pose_norm, -1.0), 1.0) * kPoseScale -
                           data.scenes[i].pose_angle);
            ee += std::abs(std::min(std::max(r.expr, 0.0), 1.0) - data.scenes[i].expression);
        }
        *pose_mae = pe / (double)n_held;
        *expr_mae = ee / (double)n_held;
        return (double)correct / (double)n_held;
    };

    Rng rng(cfg.seed ^ 0x0AC1E7Ull);
    std::ofstream log;
    if (!log_csv_path.empty()) {
        log.open(log_csv_path, std::ios::trunc);
        log << "step,loss,heldout_acc,pose_mae,expr_mae\n";
    }

    bool gates_met = false;
    for (int step = 0; step < cfg.max_steps && !gates_met; ++step) {
        const int n = cfg.batch_size;
        Tensor crops({n, cfg.input_size, cfg.input_size, 3});
        std::vector<int> labels((size_t)n);
        Tensor reg_target({n, 2});
        for (int i = 0; i < n; ++i) {
            const size_t idx = (size_t)rng.uniform_int((int64_t)n_train);
            const SceneSpec& spec = data.scenes[idx];
            const RectI sq = square_bbox(spec.face_bbox, spec.image_size);
            const RectI jit = jitter_square(sq, spec.image_size, cfg.bbox_jitter, rng);
            const Tensor c = crop_to_input(images[idx].to_image(), jit, cfg.input_size);
            const double sigma = rng.uniform(0.0, cfg.noise_aug);
            for (int64_t j = 0; j < c.numel(); ++j)
                crops[i * c.numel() + j] =
                    (float)std::min(std::max(c[j] + sigma * rng.normal(), 0.0), 1.0);
            labels[(size_t)i] = spec.identity_id;
            reg_target[i * 2 + 0] = (float)(spec.pose_angle / kPoseScale);
            reg_target[i * 2 + 1] = (float)spec.expression;
        }

        Tape tp;
        Var x = tp.leaf(crops);
        auto [logits, reg] = model.net.fwd(tp, x);
        Var ce = op_cross_entropy(tp, logits, labels);
        Var mse = op_sq_err_mean(tp, reg, reg_target);
        Var loss = op_add_scaled(tp, ce, mse, 2.0f);
        const double lval = tp.val(loss)[0];
        if (!std::isfinite(lval))
            throw std::runtime_error("oracle training: non-finite loss at step " +
                                     std::to_string(step));
        tp.backward(loss);
        opt.step(params);
        Optimizer::zero_grads(params);

        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps) {
            double pmae, emae;
            const double acc = heldout_metrics(&pmae, &emae);
            std::fprintf(stderr, "[oracle] step %d/%d loss %.4f heldout top1 %.4f pose %.4f expr %.4f\n",
                         step + 1, cfg.max_steps, lval, acc, pmae, emae);
            if (log) {
                log << step + 1 << "," << lval << "," << acc << "," << pmae << "," << emae << "\n";
                log.flush();
            }
            model.heldout_acc = acc;
            model.pose_mae = pmae;
            model.expr_mae = emae;
            gates_met = acc >= cfg.acc_gate && pmae <= cfg.pose_mae_gate && emae <= cfg.expr_mae_gate;
        }
    }

    if (!gates_met)
        throw std::runtime_error(
            "oracle training report: gates unmet within step budget; heldout top1=" +
            std::to_string(model.heldout_acc) + " pose_mae=" + std::to_string(model.pose_mae) +
            " expr_mae=" + std::to_string(model.expr_mae));

    model.net.visit([](Param& p) { p.trainable = false; });
    return model;
}

}  // namespace glyphdiff
