#pragma once

#include <string>
#include <vector>

#include "glyphdiff/layers.hpp"
#include "glyphdiff/world.hpp"

namespace glyphdiff {

struct OracleConfig {
    int input_size = 32;
    int n_classes = 64;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int batch_size = 64;
    int max_steps = 6000;
    uint64_t seed = 0;
    double noise_aug = 0.04;    // train-time pixel noise stddev upper bound
    double bbox_jitter = 0.08;  // train-time bbox jitter, fraction of side
    int eval_every = 400;
    // acceptance gates (held-out clean crops)
    double acc_gate = 0.99;
    double pose_mae_gate = 0.05;  // radians
    double expr_mae_gate = 0.05;
};

struct OracleNet {
    Conv2dT<float> c1, c2, c3, c4;
    GroupNormT<float> n1, n2, n3, n4;
    LinearT<float> fc, head_cls, head_reg;
    int input_size = 32, n_classes = 64;

    void init(const std::string& prefix, int input_size_, int n_classes_, Rng& rng);
    // crops (N,S,S,3) -> (logits (N,V), regression (N,2): pose/(pi/3), expr)
    std::pair<Var, Var> fwd(Tape& tp, Var crops);
    void visit(const ParamVisitor<float>& v);
};

struct OracleEval {
    std::vector<double> probs;  // sums to 1
    double pose = 0.0;          // radians
    double expr = 0.0;
};

struct OracleModel {
    OracleConfig cfg;
    OracleNet net;
    DatasetMeta data_meta;  // probe-set regeneration
    uint64_t train_seed = 0;
    double heldout_acc = 0.0, pose_mae = 0.0, expr_mae = 0.0;

    OracleEval evaluate(const Image& image, const RectI& face_bbox) const;
    OracleEval evaluate_crop(const Image& crop32) const;

    void save(const std::string& path) const;
    // verify=true re-checks the accuracy gates on a fixed probe set before
    // the oracle may be used for evaluation
    static OracleModel load(const std::string& path, bool verify = true);
    void verify_probe() const;  // throws when any gate fails
};

// Trains classifier + pose/expression regressor; throws with a report if the
// gates are not met within the step budget.
OracleModel train_identity_oracle(const Dataset& data, const OracleConfig& cfg,
                                  const std::string& log_csv_path = "");

}  // namespace glyphdiff
