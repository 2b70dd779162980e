#include "glyphdiff/inference.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>

#include "glyphdiff/diffusion.hpp"
#include "glyphdiff/hash.hpp"

using json = nlohmann::json;

namespace glyphdiff {

Tensor cfg_combine(const Tensor& eps_none, const Tensor& eps_t, const Tensor& eps_ti,
                   double lambda_t, double lambda_i) {
    check_same_shape(eps_none, eps_t, "cfg_combine");
    check_same_shape(eps_none, eps_ti, "cfg_combine");
    Tensor out(eps_none.shape);
    // double accumulation keeps the lambda = 1 telescoping exact in float
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = (float)((double)eps_none[i] + lambda_t * ((double)eps_t[i] - eps_none[i]) +
                         lambda_i * ((double)eps_ti[i] - eps_t[i]));
    return out;
}

namespace {
Tensor run_denoiser(TrainedModel& model, const Tensor& z_t, int t, int prompt_index,
                    const std::vector<Tensor>* injections) {
    Tape tp;
    tp.grad_enabled = false;
    Var zv = tp.leaf(z_t);
    Var tokens = op_embed_rows(tp, tp.param(model.base.prompt.table), {prompt_index});
    std::vector<Var> inj_vars;
    if (injections)
        for (const Tensor& s : *injections) inj_vars.push_back(tp.leaf(s));
    Var out = model.base.unet.forward(tp, zv, tokens, {t}, injections ? &inj_vars : nullptr);
    return tp.val(out);
}
}  // namespace

std::pair<InjectionSet, InjectionSet> person_injections(TrainedModel& model, const Tensor& z_t,
                                                        int t, const PersonConditionPack& pack) {
    const ModelConfig& mc = model.base.cfg;
    const auto specs = injection_sites(mc.denoiser);
    InjectionSet local_set = InjectionSet::zeros(specs, 1);
    InjectionSet global_set = InjectionSet::zeros(specs, 1);

    Tape tp;
    tp.grad_enabled = false;
    Var zv = tp.leaf(z_t);
    const auto& tok = pack.p_id.tokens;
    Var id_tokens = tp.leaf(Tensor({1, tok.dim(0), tok.dim(1)}, tok.data));

    if (model.use_local) {
        const auto& pe = pack.c_pe.map;
        Var c_pe = tp.leaf(Tensor({1, pe.dim(0), pe.dim(1), pe.dim(2)}, pe.data));
        std::vector<Var> sites =
            local_branch_forward(tp, model.local_branch, zv, c_pe, id_tokens, {t},
                                 {pack.loc.square_bbox_px}, mc.image_size);
        for (size_t i = 0; i < sites.size(); ++i) local_set.sites[i] = tp.val(sites[i]);
    }
    if (model.use_global) {
        const Plane& m = pack.loc.mask_latent;
        Var c_loc = tp.leaf(Tensor({1, m.height, m.width, 1}, m.data));
        std::vector<Var> sites =
            global_branch_forward(tp, model.global_branch, zv, c_loc, id_tokens, {t});
        for (size_t i = 0; i < sites.size(); ++i) global_set.sites[i] = tp.val(sites[i]);
    }
    return {std::move(local_set), std::move(global_set)};
}

Tensor predict_noise(TrainedModel& model, const Tensor& z_t, int t,
                     const std::vector<PersonConditionPack>& packs, std::optional<int> text_attr,
                     double lambda_t, double lambda_i, bool gate_id_on) {
    if (packs.empty()) throw std::invalid_argument("predict_noise: need at least one pack");
    const int null_idx = model.base.prompt.null_index();
    int attr_idx = null_idx;
    if (text_attr) {
        if (*text_attr < 0 || *text_attr >= model.base.prompt.vocab)
            throw std::out_of_range("predict_noise: text attr outside vocabulary");
        attr_idx = *text_attr;
    }

    const Tensor eps_none = run_denoiser(model, z_t, t, null_idx, nullptr);
    const Tensor eps_text = run_denoiser(model, z_t, t, attr_idx, nullptr);

    Tensor eps_ti;
    if (!gate_id_on) {
        eps_ti = eps_text;
    } else {
        std::vector<InjectionSet> locals, globals;
        locals.reserve(packs.size());
        globals.reserve(packs.size());
        for (const auto& pack : packs) {
            auto [l, g] = person_injections(model, z_t, t, pack);
            locals.push_back(std::move(l));
            globals.push_back(std::move(g));
        }
        auto [local_sum, global_mean] = integrate_multi_person(locals, globals);
        local_sum.accumulate(global_mean);
        eps_ti = run_denoiser(model, z_t, t, attr_idx, &local_sum.sites);
    }
    return cfg_combine(eps_none, eps_text, eps_ti, lambda_t, lambda_i);
}

uint64_t pack_digest(const PersonConditionPack& pack) {
    Fnv1a64 h;
    h.update_tensor(pack.p_id.tokens);
    h.update_tensor(pack.c_pe.map);
    h.update(&pack.loc.square_bbox_px, sizeof(RectI));
    h.update(pack.loc.mask_latent.data.data(), pack.loc.mask_latent.data.size() * sizeof(float));
    return h.digest();
}

GenerationResult generate(TrainedModel& model, const std::vector<PersonConditionPack>& packs,
                          std::optional<int> text_attr, const GuidanceConfig& gcfg) {
    if (packs.empty()) throw std::invalid_argument("generate: need at least one pack");
    if (gcfg.steps < 1) throw std::invalid_argument("generate: steps must be >= 1");
    if (!(gcfg.lambda_t > 0.0) || gcfg.lambda_i < 0.0)
        throw std::invalid_argument("generate: need lambda_t > 0 and lambda_i >= 0");
    if (gcfg.delay_fraction < 0.0 || gcfg.delay_fraction >= 1.0)
        throw std::invalid_argument("generate: delay_fraction must lie in [0,1)");

    const ModelConfig& mc = model.base.cfg;
    Rng rng(gcfg.seed ^ 0x6E4E4A7Eull);
    Tensor z({1, mc.denoiser.latent_hw, mc.denoiser.latent_hw, mc.denoiser.latent_c});
    rng.fill_normal(z);

    const std::vector<int> ts = ddim_timesteps(mc.sched_t, gcfg.steps);
    for (int s = 0; s < gcfg.steps; ++s) {
        const bool gate_id_on = (double)s >= gcfg.delay_fraction * gcfg.steps;
        const Tensor eps =
            predict_noise(model, z, ts[(size_t)s], packs, text_attr, gcfg.lambda_t,
                          gcfg.lambda_i, gate_id_on);
        z = ddim_step(z, eps, ts[(size_t)s], ts[(size_t)s + 1], model.base.sched);
    }

    GenerationResult out;
    out.final_latent = z;
    Image img = decode_latent(z, mc.patch);
    for (auto& v : img.data) v = std::min(std::max(v, 0.0f), 1.0f);
    out.image = std::move(img);

    json prov;
    prov["seed"] = gcfg.seed;
    prov["steps"] = gcfg.steps;
    prov["lambda_t"] = gcfg.lambda_t;
    prov["lambda_i"] = gcfg.lambda_i;
    prov["delay_fraction"] = gcfg.delay_fraction;
    prov["text_attr"] = text_attr ? json(*text_attr) : json(nullptr);
    prov["base_hash"] = hash_hex(model.base.weights_hash());
    json digests = json::array();
    for (const auto& p : packs) digests.push_back(hash_hex(pack_digest(p)));
    prov["pack_digests"] = digests;
    out.provenance_json = prov.dump();
    return out;
}

PersonConditionPack build_pack(TrainedModel& model, const Image& reference_image,
                               const Plane& reference_alpha, const RectI& reference_bbox,
                               const RectI& target_bbox,
                               const std::array<Point2, kNumKeypoints>& target_keypoints_px,
                               int source_identity) {
    const ModelConfig& mc = model.base.cfg;
    PersonConditionPack pack;
    const RectI ref_sq = square_bbox(reference_bbox, mc.image_size);
    auto [crop_img, crop_mask] =
        make_id_crop(reference_image, reference_alpha, ref_sq, mc.id_input);
    pack.p_id = encode_identity(model.idenc, model.id_proj, crop_img, crop_mask, source_identity);

    const RectI target_sq = square_bbox(target_bbox, mc.image_size);
    pack.loc = render_location_mask(target_sq, mc.image_size, mc.denoiser.latent_hw);
    pack.c_pe = render_pose_expr_map(target_keypoints_px, target_sq, mc.denoiser.latent_hw);
    return pack;
}

}  // namespace glyphdiff
