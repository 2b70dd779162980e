#pragma once

#include <optional>
#include <string>
#include <vector>

#include "glyphdiff/model.hpp"

namespace glyphdiff {

struct GuidanceConfig {
    double lambda_t = 7.5;       // text guidance weight
    double lambda_i = 5.0;       // image (ID) guidance weight
    double delay_fraction = 0.2; // fraction of early steps with ID conditioning off
    int steps = 30;
    uint64_t seed = 0;
};

// eps_none + lambda_t (eps_t - eps_none) + lambda_i (eps_ti - eps_t)
Tensor cfg_combine(const Tensor& eps_none, const Tensor& eps_t, const Tensor& eps_ti,
                   double lambda_t, double lambda_i);

// Three denoiser evaluations on a shared trajectory: null prompt with zero
// injections, text prompt with zero injections, text prompt with the
// integrated branch injections of all packs. gate_id_on=false skips the
// branches entirely and reuses the text-only prediction.
Tensor predict_noise(TrainedModel& model, const Tensor& z_t, int t,
                     const std::vector<PersonConditionPack>& packs, std::optional<int> text_attr,
                     double lambda_t, double lambda_i, bool gate_id_on);

// per-person branch injections at one timestep (value level, single sample)
std::pair<InjectionSet, InjectionSet> person_injections(TrainedModel& model, const Tensor& z_t,
                                                        int t, const PersonConditionPack& pack);

struct GenerationResult {
    Image image;
    Tensor final_latent;
    std::string provenance_json;  // seed, config, pack digests, model digest
};

GenerationResult generate(TrainedModel& model, const std::vector<PersonConditionPack>& packs,
                          std::optional<int> text_attr, const GuidanceConfig& gcfg);

// Pack construction helpers used by the CLI and the evaluation suite: encode
// the reference image's masked face crop, render the target-frame condition
// maps.
PersonConditionPack build_pack(TrainedModel& model, const Image& reference_image,
                               const Plane& reference_alpha, const RectI& reference_bbox,
                               const RectI& target_bbox,
                               const std::array<Point2, kNumKeypoints>& target_keypoints_px,
                               int source_identity = -1);

uint64_t pack_digest(const PersonConditionPack& pack);

}  // namespace glyphdiff
