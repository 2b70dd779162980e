#include "glyphdiff/model.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>

#include "glyphdiff/hash.hpp"

using json = nlohmann::json;

namespace glyphdiff {

std::pair<InjectionSet, InjectionSet> integrate_multi_person(
    const std::vector<InjectionSet>& locals, const std::vector<InjectionSet>& globals) {
    if (locals.empty() || globals.empty())
        throw std::invalid_argument("integrate_multi_person: empty injection list");
    if (locals.size() != globals.size())
        throw std::invalid_argument("integrate_multi_person: per-person list length mismatch");
    InjectionSet local_sum = locals[0];
    InjectionSet global_mean = globals[0];
    for (size_t i = 1; i < locals.size(); ++i) {
        local_sum.accumulate(locals[i]);
        global_mean.accumulate(globals[i]);
    }
    if (globals.size() > 1) global_mean.scale(1.0f / (float)globals.size());
    return {std::move(local_sum), std::move(global_mean)};
}

ModelConfig default_model_config() {
    ModelConfig c;
    c.denoiser.latent_hw = c.image_size / c.patch;
    c.denoiser.latent_c = 3 * c.patch * c.patch;
    c.denoiser.token_dim = c.id_dim;
    return c;
}

std::string ModelConfig::to_json() const {
    json j;
    j["image_size"] = image_size;
    j["patch"] = patch;
    j["widths"] = denoiser.widths;
    j["groups"] = denoiser.groups;
    j["sin_dim"] = denoiser.sin_dim;
    j["temb_dim"] = denoiser.temb_dim;
    j["sched_t"] = sched_t;
    j["beta_lo"] = beta_lo;
    j["beta_hi"] = beta_hi;
    j["prompt_vocab"] = prompt_vocab;
    j["prompt_tokens"] = prompt_tokens;
    j["id_tokens"] = id_tokens;
    j["id_dim"] = id_dim;
    j["id_input"] = id_input;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
    json j = json::parse(s);
    ModelConfig c;
    c.image_size = j["image_size"];
    c.patch = j["patch"];
    for (int i = 0; i < 3; ++i) c.denoiser.widths[(size_t)i] = j["widths"][(size_t)i];
    c.denoiser.groups = j["groups"];
    c.denoiser.sin_dim = j["sin_dim"];
    c.denoiser.temb_dim = j["temb_dim"];
    c.sched_t = j["sched_t"];
    c.beta_lo = j["beta_lo"];
    c.beta_hi = j["beta_hi"];
    c.prompt_vocab = j["prompt_vocab"];
    c.prompt_tokens = j["prompt_tokens"];
    c.id_tokens = j["id_tokens"];
    c.id_dim = j["id_dim"];
    c.id_input = j["id_input"];
    c.denoiser.latent_hw = c.image_size / c.patch;
    c.denoiser.latent_c = 3 * c.patch * c.patch;
    c.denoiser.token_dim = c.id_dim;
    return c;
}

void BaseModel::init(const ModelConfig& c, uint64_t seed) {
    cfg = c;
    Rng rng(seed ^ 0xBA5Eull);
    unet.init("base.unet", cfg.denoiser, rng);
    prompt.init("prompt.table", cfg.prompt_vocab, cfg.prompt_tokens, cfg.id_dim, rng);
    sched = make_schedule(cfg.sched_t, cfg.beta_lo, cfg.beta_hi);
}

void BaseModel::visit_params(const ParamVisitor<float>& v) {
    unet.visit(v);
    prompt.visit(v);
}

void BaseModel::set_trainable(bool trainable) {
    visit_params([trainable](Param& p) { p.trainable = trainable; });
}

uint64_t BaseModel::weights_hash() const {
    Fnv1a64 h;
    const_cast<BaseModel*>(this)->visit_params([&](Param& p) {
        h.update_str(p.name);
        h.update_tensor(p.value);
    });
    return h.digest();
}

void BaseModel::save(const std::string& path, const std::string& extra_meta_json) const {
    NamedTensors nt;
    const_cast<BaseModel*>(this)->visit_params([&](Param& p) { nt.put(p.name, p.value); });
    nt.save(path);
    json meta;
    meta["kind"] = "base";
    meta["model_config"] = json::parse(cfg.to_json());
    meta["base_hash"] = hash_hex(weights_hash());
    meta["extra"] = json::parse(extra_meta_json);
    std::ofstream f(json_sidecar_path(path));
    f << meta.dump(2) << "\n";
}

BaseModel BaseModel::load(const std::string& path) {
    std::ifstream f(json_sidecar_path(path));
    if (!f) throw std::runtime_error("missing metadata sidecar for " + path);
    json meta = json::parse(f);
    BaseModel m;
    m.init(ModelConfig::from_json(meta["model_config"].dump()), 0);
    NamedTensors nt = NamedTensors::load(path);
    m.visit_params([&](Param& p) {
        const Tensor& t = nt.get(p.name);
        check_same_shape(p.value, t, p.name.c_str());
        p.value = t;
    });
    const std::string want = meta["base_hash"];
    if (hash_hex(m.weights_hash()) != want)
        throw std::runtime_error("base weight hash mismatch loading " + path);
    m.set_trainable(false);
    return m;
}

void TrainedModel::init_branches(uint64_t seed) {
    Rng rng(seed ^ 0xB4A2C4ull);
    local_branch.init("branch.local", base.unet, kPoseExprChannels, rng);
    global_branch.init("branch.global", base.unet, 1, rng);
    idenc.init("idenc", base.cfg.id_input, base.cfg.id_tokens, base.cfg.id_dim, rng);
    id_proj.init("proj.id.proj", base.cfg.id_dim, base.cfg.id_dim, rng);
    id_null.name = "proj.id.null";
    id_null.value = Tensor({base.cfg.id_tokens, base.cfg.id_dim});
    rng.fill_normal(id_null.value, 0.5);
}

void TrainedModel::visit_trainable(const ParamVisitor<float>& v) {
    if (use_local) local_branch.visit(v);
    if (use_global) global_branch.visit(v);
    idenc.visit(v);
    id_proj.visit(v);
    v(id_null);
}

void TrainedModel::visit_all(const ParamVisitor<float>& v) {
    base.visit_params(v);
    local_branch.visit(v);
    global_branch.visit(v);
    idenc.visit(v);
    id_proj.visit(v);
    v(id_null);
}

std::string dataset_meta_to_json(const DatasetMeta& m) {
    json j;
    j["image_size"] = m.world.image_size;
    j["n_identities"] = m.world.n_identities;
    j["separation_margin"] = m.world.separation_margin;
    j["n_backgrounds"] = m.world.n_backgrounds;
    j["bank_seed"] = m.bank_seed;
    j["scene_seed"] = m.scene_seed;
    j["size_lo"] = m.size_lo;
    j["size_hi"] = m.size_hi;
    j["n_scenes"] = m.n_scenes;
    return j.dump();
}

DatasetMeta dataset_meta_from_json(const std::string& s) {
    json j = json::parse(s);
    DatasetMeta m;
    m.world.image_size = j["image_size"];
    m.world.n_identities = j["n_identities"];
    m.world.separation_margin = j["separation_margin"];
    m.world.n_backgrounds = j["n_backgrounds"];
    m.bank_seed = j["bank_seed"];
    m.scene_seed = j["scene_seed"];
    m.size_lo = j["size_lo"];
    m.size_hi = j["size_hi"];
    m.n_scenes = j["n_scenes"];
    return m;
}

}  // namespace glyphdiff
