#pragma once

#include <string>

#include "glyphdiff/branches.hpp"
#include "glyphdiff/conditions.hpp"
#include "glyphdiff/denoiser.hpp"
#include "glyphdiff/diffusion.hpp"
#include "glyphdiff/named_tensors.hpp"
#include "glyphdiff/world.hpp"

namespace glyphdiff {

struct ModelConfig {
    int image_size = 64;
    int patch = 2;
    DenoiserConfig denoiser;  // latent_hw / latent_c derived from image_size & patch
    int sched_t = 1000;
    double beta_lo = 1e-4, beta_hi = 2e-2;
    int prompt_vocab = 8, prompt_tokens = 4;
    int id_tokens = 8, id_dim = 64, id_input = 32;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& s);
};

ModelConfig default_model_config();

// The frozen generative stack: codec parameters, schedule, U-Net, prompt
// token table.
struct BaseModel {
    ModelConfig cfg;
    UNet unet;
    PromptTable prompt;
    DiffusionSchedule sched;

    void init(const ModelConfig& c, uint64_t seed);
    void visit_params(const ParamVisitor<float>& v);
    void set_trainable(bool trainable);
    uint64_t weights_hash() const;

    void save(const std::string& path, const std::string& extra_meta_json = "{}") const;
    static BaseModel load(const std::string& path);
};

// The full bundle: frozen base plus everything branch training owns.
struct TrainedModel {
    BaseModel base;
    ControlBranch local_branch, global_branch;
    bool use_local = true, use_global = true;
    IdEncoderNet idenc;
    LinearT<float> id_proj;
    Param id_null;  // learned ID-null token block (K, D)
    DatasetMeta data_meta;

    // zero-conv construction seeded deterministically from the frozen base
    void init_branches(uint64_t seed);

    // branches + condition stems + projection + null block + encoder trunk
    void visit_trainable(const ParamVisitor<float>& v);
    void visit_all(const ParamVisitor<float>& v);
};

std::string dataset_meta_to_json(const DatasetMeta& m);
DatasetMeta dataset_meta_from_json(const std::string& s);

}  // namespace glyphdiff
