#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "glyphdiff/model.hpp"
#include "glyphdiff/rng.hpp"
#include "glyphdiff/tape.hpp"

namespace glyphdiff {

struct TrainConfig {
    double lambda_face = 1.0;  // weight of the face-masked loss term
    double lr = 1e-4;
    double weight_decay = 1e-2;
    int batch_size = 16;
    int max_steps = 3000;
    double p_drop_image = 0.05, p_drop_text = 0.05, p_drop_both = 0.05;
    uint64_t seed = 0;
    int eval_every = 250;
    int lr_warmup_steps = 100;
    double id_warmup_frac = 0.10;  // ID-encoder trunk trains for this fraction, then freezes
    std::string loss_norm = "l2sq";  // "l2sq" (mean squared) or "l2" (root of it)
    bool use_local = true, use_global = true;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& s);
    // flat key-value text file, one `key = value` per line, '#' comments
    static TrainConfig from_file(const std::string& path);
};

// --- loss --------------------------------------------------------------------

struct LossParts {
    Var total = -1, term1 = -1, term2 = -1;
};

// term1: mean squared error over all entries; term2: mean over mask-selected
// entries (mask broadcast over channels, empty mask -> 0). total = term1 +
// lambda * term2. With loss_norm "l2" each term is the square root of its
// mean-square.
LossParts compute_loss(Tape& tp, Var eps_pred, const Tensor& eps, const Tensor& mask_latent,
                       float lambda_face, const std::string& loss_norm = "l2sq");

// --- prompt dropout ------------------------------------------------------------

enum class DropEvent { kNone, kImage, kText, kBoth };

// three mutually exclusive events with the given probabilities
DropEvent sample_drop_event(Rng& rng, double p_image, double p_text, double p_both);

// spec-shaped convenience: replace dropped blocks by the learned null blocks
std::pair<Tensor, Tensor> prompt_dropout(const Tensor& p_id, const Tensor& p_text,
                                         const Tensor& id_null, const Tensor& text_null,
                                         Rng& rng, double p_drop_image, double p_drop_text,
                                         double p_drop_both);

// --- optimizer -----------------------------------------------------------------

struct OptimConfig {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
};

// Adam with decoupled weight decay. Moments exist only for trainable params.
struct Optimizer {
    OptimConfig cfg;
    int64_t step_count = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments;

    void step(const std::vector<Param*>& params, double lr_scale = 1.0);
    static void zero_grads(const std::vector<Param*>& params);
};

// --- batches -------------------------------------------------------------------

struct TrainBatch {
    Tensor z0;        // (N, hw, hw, C_lat)
    Tensor c_pe;      // (N, hw, hw, 4)
    Tensor c_loc;     // (N, hw, hw, 1) — also the Eq.-style loss mask
    Tensor id_crops;  // (N, S, S, 3), masked
    std::vector<RectI> square_px;
    std::vector<int> attrs;
    std::vector<int> identities;
};

TrainBatch build_batch(const Dataset& data, const std::vector<size_t>& indices,
                       const ModelConfig& cfg);

// --- train state / checkpoints ---------------------------------------------------

struct TrainState {
    int64_t step = 0;
    Optimizer opt;
    Rng rng;
    TrainConfig cfg;
    double last_loss = 0.0, last_term1 = 0.0, last_term2 = 0.0;
};

void save_checkpoint(const TrainedModel& model, const TrainState& state, const std::string& path);

struct LoadedCheckpoint {
    TrainedModel model;
    TrainState state;
};

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<uint64_t> expect_base_hash = std::nullopt);

// --- training loops ---------------------------------------------------------------

struct StepStats {
    double loss = 0.0, term1 = 0.0, term2 = 0.0;
};

class BranchTrainer {
public:
    BranchTrainer(TrainedModel& model, const Dataset& data, TrainState state);

    // one optimizer update on the masked objective; base weights stay frozen
    StepStats train_step();

    TrainState& state() { return state_; }
    const TrainState& state() const { return state_; }

    // full run with CSV logging (step,loss,term1,term2); returns final stats
    StepStats run(const std::string& log_csv_path = "");

private:
    void apply_id_trunk_freeze();

    TrainedModel& model_;
    const Dataset& data_;
    TrainState state_;
    std::vector<Param*> trainable_;
    bool idenc_frozen_ = false;
};

// Pretrains the frozen stack (U-Net + prompt table) on the plain diffusion
// objective with text dropout, then freezes it.
struct PretrainConfig {
    double lr = 2e-4;
    double weight_decay = 1e-2;
    int batch_size = 16;
    int max_steps = 2500;
    double p_drop_text = 0.1;
    uint64_t seed = 0;
    int eval_every = 250;
    int lr_warmup_steps = 100;
};

struct PretrainResult {
    double init_val_loss = 0.0;
    double final_val_loss = 0.0;
};

PretrainResult pretrain_base(BaseModel& base, const Dataset& data, const PretrainConfig& cfg,
                             const std::string& log_csv_path = "");

}  // namespace glyphdiff
