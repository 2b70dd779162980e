#include "glyphdiff/training.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "glyphdiff/hash.hpp"
#include "glyphdiff/parallel.hpp"

using json = nlohmann::json;

namespace glyphdiff {

// --- config ------------------------------------------------------------------

std::string TrainConfig::to_json() const {
    json j;
    j["lambda_face"] = lambda_face;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["batch_size"] = batch_size;
    j["max_steps"] = max_steps;
    j["p_drop_image"] = p_drop_image;
    j["p_drop_text"] = p_drop_text;
    j["p_drop_both"] = p_drop_both;
    j["seed"] = seed;
    j["eval_every"] = eval_every;
    j["lr_warmup_steps"] = lr_warmup_steps;
    j["id_warmup_frac"] = id_warmup_frac;
    j["loss_norm"] = loss_norm;
    j["use_local"] = use_local;
    j["use_global"] = use_global;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& s) {
    json j = json::parse(s);
    TrainConfig c;
    c.lambda_face = j["lambda_face"];
    c.lr = j["lr"];
    c.weight_decay = j["weight_decay"];
    c.batch_size = j["batch_size"];
    c.max_steps = j["max_steps"];
    c.p_drop_image = j["p_drop_image"];
    c.p_drop_text = j["p_drop_text"];
    c.p_drop_both = j["p_drop_both"];
    c.seed = j["seed"];
    c.eval_every = j["eval_every"];
    c.lr_warmup_steps = j["lr_warmup_steps"];
    c.id_warmup_frac = j["id_warmup_frac"];
    c.loss_norm = j["loss_norm"];
    c.use_local = j["use_local"];
    c.use_global = j["use_global"];
    return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open train config " + path);
    TrainConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        try {
            if (key == "lambda_face") c.lambda_face = std::stod(val);
            else if (key == "lr") c.lr = std::stod(val);
            else if (key == "weight_decay") c.weight_decay = std::stod(val);
            else if (key == "batch_size") c.batch_size = std::stoi(val);
            else if (key == "max_steps") c.max_steps = std::stoi(val);
            else if (key == "p_drop_image") c.p_drop_image = std::stod(val);
            else if (key == "p_drop_text") c.p_drop_text = std::stod(val);
            else if (key == "p_drop_both") c.p_drop_both = std::stod(val);
            else if (key == "seed") c.seed = (uint64_t)std::stoull(val);
            else if (key == "eval_every") c.eval_every = std::stoi(val);
            else if (key == "lr_warmup_steps") c.lr_warmup_steps = std::stoi(val);
            else if (key == "id_warmup_frac") c.id_warmup_frac = std::stod(val);
            else if (key == "loss.norm" || key == "loss_norm") c.loss_norm = val;
            else if (key == "use_local") c.use_local = val == "true" || val == "1";
            else if (key == "use_global") c.use_global = val == "true" || val == "1";
            else throw std::runtime_error("unknown key");
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad entry '" + key +
                                     "': " + e.what());
        }
    }
    if (c.loss_norm != "l2sq" && c.loss_norm != "l2")
        throw std::runtime_error("loss_norm must be l2sq or l2");
    if (c.lambda_face < 0) throw std::runtime_error("lambda_face must be >= 0");
    if (c.p_drop_image < 0 || c.p_drop_text < 0 || c.p_drop_both < 0 ||
        c.p_drop_image + c.p_drop_text + c.p_drop_both > 1.0)
        throw std::runtime_error("drop probabilities must be in [0,1] and sum to <= 1");
    return c;
}

// --- loss --------------------------------------------------------------------

LossParts compute_loss(Tape& tp, Var eps_pred, const Tensor& eps, const Tensor& mask_latent,
                       float lambda_face, const std::string& loss_norm) {
    LossParts parts;
    parts.term1 = op_sq_err_mean(tp, eps_pred, eps);
    parts.term2 = op_sq_err_masked_mean(tp, eps_pred, eps, mask_latent);
    if (loss_norm == "l2") {
        parts.term1 = op_sqrt_scalar(tp, parts.term1);
        parts.term2 = op_sqrt_scalar(tp, parts.term2);
    } else if (loss_norm != "l2sq") {
        throw std::invalid_argument("compute_loss: loss_norm must be l2sq or l2");
    }
    parts.total = op_add_scaled(tp, parts.term1, parts.term2, lambda_face);
    return parts;
}

// --- dropout -----------------------------------------------------------------

DropEvent sample_drop_event(Rng& rng, double p_image, double p_text, double p_both) {
    const double u = rng.uniform();
    if (u < p_image) return DropEvent::kImage;
    if (u < p_image + p_text) return DropEvent::kText;
    if (u < p_image + p_text + p_both) return DropEvent::kBoth;
    return DropEvent::kNone;
}

std::pair<Tensor, Tensor> prompt_dropout(const Tensor& p_id, const Tensor& p_text,
                                         const Tensor& id_null, const Tensor& text_null,
                                         Rng& rng, double p_image, double p_text_prob,
                                         double p_both) {
    const DropEvent ev = sample_drop_event(rng, p_image, p_text_prob, p_both);
    Tensor out_id = (ev == DropEvent::kImage || ev == DropEvent::kBoth) ? id_null : p_id;
    Tensor out_text = (ev == DropEvent::kText || ev == DropEvent::kBoth) ? text_null : p_text;
    return {std::move(out_id), std::move(out_text)};
}

// --- optimizer -----------------------------------------------------------------

void Optimizer::step(const std::vector<Param*>& params, double lr_scale) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(cfg.beta1, (double)step_count);
    const double bc2 = 1.0 - std::pow(cfg.beta2, (double)step_count);
    const double lr = cfg.lr * lr_scale;
    for (Param* p : params) {
        if (!p->trainable) continue;
        p->ensure_grad();
        auto& slot = moments[p->name];
        if (!slot.first.same_shape(p->value)) {
            slot.first = Tensor(p->value.shape);
            slot.second = Tensor(p->value.shape);
        }
        Tensor& m = slot.first;
        Tensor& v = slot.second;
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            m[i] = (float)(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g);
            v[i] = (float)(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->value[i] -= (float)(lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                         cfg.weight_decay * p->value[i]));
        }
    }
}

void Optimizer::zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) {
        p->ensure_grad();
        p->grad.fill(0.0f);
    }
}

// --- batches -------------------------------------------------------------------

TrainBatch build_batch(const Dataset& data, const std::vector<size_t>& indices,
                       const ModelConfig& cfg) {
    const int n = (int)indices.size();
    const int hw = cfg.denoiser.latent_hw;
    TrainBatch b;
    b.z0 = Tensor({n, hw, hw, cfg.denoiser.latent_c});
    b.c_pe = Tensor({n, hw, hw, kPoseExprChannels});
    b.c_loc = Tensor({n, hw, hw, 1});
    b.id_crops = Tensor({n, cfg.id_input, cfg.id_input, 3});
    b.square_px.resize((size_t)n);
    b.attrs.resize((size_t)n);
    b.identities.resize((size_t)n);

    parallel_for(n, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const SceneSpec& spec = data.scenes[indices[(size_t)i]];
            const RenderResult r = render_scene(spec, data.bank);
            const RectI sq = square_bbox(spec.face_bbox, cfg.image_size);
            b.square_px[(size_t)i] = sq;
            b.attrs[(size_t)i] = spec.background_attr;
            b.identities[(size_t)i] = spec.identity_id;

            const Tensor z = encode_latent(r.image, cfg.patch);
            std::copy(z.data.begin(), z.data.end(), b.z0.ptr() + i * z.numel());

            const LocationGuidance lg = render_location_mask(sq, cfg.image_size, hw);
            std::copy(lg.mask_latent.data.begin(), lg.mask_latent.data.end(),
                      b.c_loc.ptr() + i * (int64_t)hw * hw);

            const PoseExprMap pe = render_pose_expr_map(r.keypoints, sq, hw);
            std::copy(pe.map.data.begin(), pe.map.data.end(), b.c_pe.ptr() + i * pe.map.numel());

            auto [cimg, cmask] = make_id_crop(r.image, r.glyph_alpha, sq, cfg.id_input);
            const Tensor masked = apply_pixel_mask(cimg, cmask);
            std::copy(masked.data.begin(), masked.data.end(),
                      b.id_crops.ptr() + i * masked.numel());
        }
    });
    return b;
}

// --- checkpoints -----------------------------------------------------------------

void save_checkpoint(const TrainedModel& model, const TrainState& state, const std::string& path) {
    NamedTensors nt;
    const_cast<TrainedModel&>(model).visit_all([&](Param& p) { nt.put(p.name, p.value); });
    for (const auto& [name, mv] : state.opt.moments) {
        nt.put("opt.m." + name, mv.first);
        nt.put("opt.v." + name, mv.second);
    }
    nt.blobs["rng"] = state.rng.serialize();
    nt.save(path);

    json meta;
    meta["kind"] = "train";
    meta["model_config"] = json::parse(model.base.cfg.to_json());
    meta["train_config"] = json::parse(state.cfg.to_json());
    meta["dataset_meta"] = json::parse(dataset_meta_to_json(model.data_meta));
    meta["step"] = state.step;
    meta["opt_step_count"] = state.opt.step_count;
    meta["base_hash"] = hash_hex(model.base.weights_hash());
    meta["use_local"] = model.use_local;
    meta["use_global"] = model.use_global;
    meta["last_loss"] = state.last_loss;
    meta["last_term1"] = state.last_term1;
    meta["last_term2"] = state.last_term2;
    std::ofstream f(json_sidecar_path(path));
    if (!f) throw std::runtime_error("cannot write sidecar for " + path);
    f << meta.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<uint64_t> expect_base_hash) {
    std::ifstream f(json_sidecar_path(path));
    if (!f) throw std::runtime_error("missing metadata sidecar for " + path);
    json meta = json::parse(f);
    if (meta["kind"] != "train") throw std::runtime_error(path + " is not a training checkpoint");

    LoadedCheckpoint out;
    out.model.base.init(ModelConfig::from_json(meta["model_config"].dump()), 0);
    out.model.init_branches(0);
    out.model.use_local = meta["use_local"];
    out.model.use_global = meta["use_global"];
    out.model.data_meta = dataset_meta_from_json(meta["dataset_meta"].dump());

    NamedTensors nt = NamedTensors::load(path);
    out.model.visit_all([&](Param& p) {
        const Tensor& t = nt.get(p.name);
        check_same_shape(p.value, t, p.name.c_str());
        p.value = t;
    });
    out.model.base.set_trainable(false);

    const std::string stored_hash = meta["base_hash"];
    if (hash_hex(out.model.base.weights_hash()) != stored_hash)
        throw std::runtime_error("base weights corrupted in checkpoint " + path);
    if (expect_base_hash && hash_hex(*expect_base_hash) != stored_hash)
        throw std::runtime_error("base weight hash mismatch: checkpoint " + path +
                                 " was trained against a different frozen base");

    out.state.step = meta["step"];
    out.state.cfg = TrainConfig::from_json(meta["train_config"].dump());
    out.state.opt.cfg.lr = out.state.cfg.lr;
    out.state.opt.cfg.weight_decay = out.state.cfg.weight_decay;
    out.state.opt.step_count = meta["opt_step_count"];
    out.state.last_loss = meta["last_loss"];
    out.state.last_term1 = meta["last_term1"];
    out.state.last_term2 = meta["last_term2"];
    for (const auto& [name, t] : nt.tensors) {
        if (name.rfind("opt.m.", 0) == 0)
            out.state.opt.moments[name.substr(6)].first = t;
        else if (name.rfind("opt.v.", 0) == 0)
            out.state.opt.moments[name.substr(6)].second = t;
    }
    out.state.rng.deserialize(nt.blobs.at("rng"));
    return out;
}

// --- branch trainer ----------------------------------------------------------------

BranchTrainer::BranchTrainer(TrainedModel& model, const Dataset& data, TrainState state)
    : model_(model), data_(data), state_(std::move(state)) {
    bool any_base_trainable = false;
    model_.base.visit_params([&](Param& p) { any_base_trainable |= p.trainable; });
    if (any_base_trainable)
        throw std::logic_error("BranchTrainer: base weights must be frozen before training");
    model_.use_local = state_.cfg.use_local;
    model_.use_global = state_.cfg.use_global;
    if (!model_.use_local && !model_.use_global)
        throw std::invalid_argument("BranchTrainer: at least one branch must be enabled");
    state_.opt.cfg.lr = state_.cfg.lr;
    state_.opt.cfg.weight_decay = state_.cfg.weight_decay;
    apply_id_trunk_freeze();
    trainable_.clear();
    model_.visit_trainable([&](Param& p) { trainable_.push_back(&p); });
}

void BranchTrainer::apply_id_trunk_freeze() {
    const int64_t freeze_at = (int64_t)(state_.cfg.id_warmup_frac * state_.cfg.max_steps);
    const bool should_freeze = state_.step >= freeze_at;
    if (should_freeze == idenc_frozen_) return;
    idenc_frozen_ = should_freeze;
    model_.idenc.visit([&](Param& p) { p.trainable = !should_freeze; });
    trainable_.clear();
    model_.visit_trainable([&](Param& p) { trainable_.push_back(&p); });
}

StepStats BranchTrainer::train_step() {
    const TrainConfig& cfg = state_.cfg;
    const ModelConfig& mc = model_.base.cfg;
    const int n = cfg.batch_size;

    // fixed draw order: indices, timesteps, noise, dropout events
    std::vector<size_t> idx((size_t)n);
    for (auto& i : idx) i = (size_t)state_.rng.uniform_int((int64_t)data_.scenes.size());
    TrainBatch batch = build_batch(data_, idx, mc);

    std::vector<int> ts((size_t)n);
    for (auto& t : ts) t = 1 + (int)state_.rng.uniform_int(mc.sched_t);

    Tensor eps(batch.z0.shape);
    state_.rng.fill_normal(eps);

    Tensor z_t(batch.z0.shape);
    const int64_t per = batch.z0.numel() / n;
    for (int i = 0; i < n; ++i) {
        const double ab = model_.base.sched.alpha_bar[(size_t)ts[(size_t)i]];
        const float a = (float)std::sqrt(ab), b = (float)std::sqrt(1.0 - ab);
        for (int64_t j = 0; j < per; ++j)
            z_t[i * per + j] = a * batch.z0[i * per + j] + b * eps[i * per + j];
    }

    std::vector<uint8_t> keep_id((size_t)n);
    std::vector<int> text_idx((size_t)n);
    for (int i = 0; i < n; ++i) {
        const DropEvent ev =
            sample_drop_event(state_.rng, cfg.p_drop_image, cfg.p_drop_text, cfg.p_drop_both);
        keep_id[(size_t)i] = ev != DropEvent::kImage && ev != DropEvent::kBoth;
        const bool drop_text = ev == DropEvent::kText || ev == DropEvent::kBoth;
        text_idx[(size_t)i] =
            drop_text ? model_.base.prompt.null_index() : batch.attrs[(size_t)i];
    }

    Tape tp;
    Var z_t_v = tp.leaf(z_t);
    Var crops = tp.leaf(batch.id_crops);
    Var enc_tokens = model_.id_proj.fwd(tp, model_.idenc.fwd(tp, crops));
    Var null_tokens = op_broadcast_rows(tp, tp.param(model_.id_null), n);
    Var id_tokens = op_select_rows(tp, enc_tokens, null_tokens, keep_id);
    Var text_tokens = op_embed_rows(tp, tp.param(model_.base.prompt.table), text_idx);

    std::vector<Var> injections;
    if (model_.use_local) {
        Var c_pe = tp.leaf(batch.c_pe);
        injections = local_branch_forward(tp, model_.local_branch, z_t_v, c_pe, id_tokens, ts,
                                          batch.square_px, mc.image_size);
    }
    if (model_.use_global) {
        Var c_loc = tp.leaf(batch.c_loc);
        std::vector<Var> g =
            global_branch_forward(tp, model_.global_branch, z_t_v, c_loc, id_tokens, ts);
        if (injections.empty()) {
            injections = std::move(g);
        } else {
            for (size_t s = 0; s < injections.size(); ++s)
                injections[s] = op_add(tp, injections[s], g[s]);
        }
    }

    Var eps_pred = model_.base.unet.forward(tp, z_t_v, text_tokens, ts, &injections);
    const LossParts parts =
        compute_loss(tp, eps_pred, eps, batch.c_loc, (float)cfg.lambda_face, cfg.loss_norm);

    StepStats stats;
    stats.loss = tp.val(parts.total)[0];
    stats.term1 = tp.val(parts.term1)[0];
    stats.term2 = tp.val(parts.term2)[0];
    if (!std::isfinite(stats.loss)) {
        std::fprintf(stderr,
                     "[train] non-finite loss at step %lld: loss=%g term1=%g term2=%g; "
                     "batch identities:", (long long)state_.step, stats.loss, stats.term1,
                     stats.term2);
        for (int i : batch.identities) std::fprintf(stderr, " %d", i);
        std::fprintf(stderr, "\n");
        throw std::runtime_error("training aborted: non-finite loss");
    }

    tp.backward(parts.total);
    const double warm = cfg.lr_warmup_steps > 0
                            ? std::min(1.0, (double)(state_.step + 1) / cfg.lr_warmup_steps)
                            : 1.0;
    state_.opt.step(trainable_, warm);
    Optimizer::zero_grads(trainable_);

    ++state_.step;
    state_.last_loss = stats.loss;
    state_.last_term1 = stats.term1;
    state_.last_term2 = stats.term2;
    apply_id_trunk_freeze();
    return stats;
}

StepStats BranchTrainer::run(const std::string& log_csv_path) {
    std::ofstream log;
    if (!log_csv_path.empty()) {
        const bool fresh = state_.step == 0;
        log.open(log_csv_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log) throw std::runtime_error("cannot open training log " + log_csv_path);
        if (fresh) log << "step,loss,term1,term2\n";
    }
    StepStats stats;
    while (state_.step < state_.cfg.max_steps) {
        stats = train_step();
        if (log)
            log << state_.step << "," << stats.loss << "," << stats.term1 << "," << stats.term2
                << "\n";
        if (state_.cfg.eval_every > 0 && state_.step % state_.cfg.eval_every == 0) {
            std::fprintf(stderr, "[train] step %lld/%d loss %.5f (base %.5f face %.5f)\n",
                         (long long)state_.step, state_.cfg.max_steps, stats.loss, stats.term1,
                         stats.term2);
            if (log) log.flush();
        }
    }
    return stats;
}

// --- base pretraining -----------------------------------------------------------------

PretrainResult pretrain_base(BaseModel& base, const Dataset& data, const PretrainConfig& cfg,
                             const std::string& log_csv_path) {
    base.set_trainable(true);
    std::vector<Param*> params;
    base.visit_params([&](Param& p) { params.push_back(&p); });

    Optimizer opt;
    opt.cfg.lr = cfg.lr;
    opt.cfg.weight_decay = cfg.weight_decay;
    Rng rng(cfg.seed ^ 0x9A5EB00Dull);

    // fixed held-out probe: last scenes of the dataset with fixed noise draws
    const int val_n = std::min<int>(48, (int)data.scenes.size() / 10 + 1);
    std::vector<size_t> val_idx((size_t)val_n);
    for (int i = 0; i < val_n; ++i) val_idx[(size_t)i] = data.scenes.size() - 1 - (size_t)i;
    const TrainBatch val_batch = build_batch(data, val_idx, base.cfg);
    Rng val_rng(cfg.seed ^ 0x7A11ull);
    std::vector<int> val_ts((size_t)val_n);
    for (auto& t : val_ts) t = 1 + (int)val_rng.uniform_int(base.cfg.sched_t);
    Tensor val_eps(val_batch.z0.shape);
    val_rng.fill_normal(val_eps);

    auto eval_val = [&]() {
        Tensor z_t(val_batch.z0.shape);
        const int64_t per = val_batch.z0.numel() / val_n;
        for (int i = 0; i < val_n; ++i) {
            const double ab = base.sched.alpha_bar[(size_t)val_ts[(size_t)i]];
            const float a = (float)std::sqrt(ab), b = (float)std::sqrt(1.0 - ab);
            for (int64_t j = 0; j < per; ++j)
                z_t[i * per + j] = a * val_batch.z0[i * per + j] + b * val_eps[i * per + j];
        }
        Tape tp;
        tp.grad_enabled = false;
        Var zv = tp.leaf(z_t);
        Var tokens = op_embed_rows(tp, tp.param(base.prompt.table), val_batch.attrs);
        Var pred = base.unet.forward(tp, zv, tokens, val_ts, nullptr);
        Var l = op_sq_err_mean(tp, pred, val_eps);
        return (double)tp.val(l)[0];
    };

    PretrainResult result;
    result.init_val_loss = eval_val();

    std::ofstream log;
    if (!log_csv_path.empty()) {
        log.open(log_csv_path, std::ios::trunc);
        log << "step,loss\n";
    }

    for (int step = 0; step < cfg.max_steps; ++step) {
        const int n = cfg.batch_size;
        std::vector<size_t> idx((size_t)n);
        for (auto& i : idx) i = (size_t)rng.uniform_int((int64_t)data.scenes.size());
        TrainBatch batch = build_batch(data, idx, base.cfg);
        std::vector<int> ts((size_t)n);
        for (auto& t : ts) t = 1 + (int)rng.uniform_int(base.cfg.sched_t);
        Tensor eps(batch.z0.shape);
        rng.fill_normal(eps);
        Tensor z_t(batch.z0.shape);
        const int64_t per = batch.z0.numel() / n;
        for (int i = 0; i < n; ++i) {
            const double ab = base.sched.alpha_bar[(size_t)ts[(size_t)i]];
            const float a = (float)std::sqrt(ab), b = (float)std::sqrt(1.0 - ab);
            for (int64_t j = 0; j < per; ++j)
                z_t[i * per + j] = a * batch.z0[i * per + j] + b * eps[i * per + j];
        }
        std::vector<int> text_idx((size_t)n);
        for (int i = 0; i < n; ++i) {
            const bool drop = rng.uniform() < cfg.p_drop_text;
            text_idx[(size_t)i] = drop ? base.prompt.null_index() : batch.attrs[(size_t)i];
        }

        Tape tp;
        Var zv = tp.leaf(z_t);
        Var tokens = op_embed_rows(tp, tp.param(base.prompt.table), text_idx);
        Var pred = base.unet.forward(tp, zv, tokens, ts, nullptr);
        Var loss = op_sq_err_mean(tp, pred, eps);
        const double lval = tp.val(loss)[0];
        if (!std::isfinite(lval))
            throw std::runtime_error("pretrain aborted: non-finite loss at step " +
                                     std::to_string(step));
        tp.backward(loss);
        const double warm =
            cfg.lr_warmup_steps > 0 ? std::min(1.0, (double)(step + 1) / cfg.lr_warmup_steps) : 1.0;
        opt.step(params, warm);
        Optimizer::zero_grads(params);
        if (log) log << step + 1 << "," << lval << "\n";
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            std::fprintf(stderr, "[pretrain] step %d/%d loss %.5f val %.5f\n", step + 1,
                         cfg.max_steps, lval, eval_val());
            if (log) log.flush();
        }
    }

    result.final_val_loss = eval_val();
    base.set_trainable(false);
    return result;
}

}  // namespace glyphdiff
