#pragma once

#include <optional>
#include <string>
#include <vector>

#include "glyphdiff/inference.hpp"
#include "glyphdiff/oracle.hpp"

namespace glyphdiff {

// --- statistics ------------------------------------------------------------------

struct WilsonInterval {
    double lo = 0.0, hi = 1.0;
};

WilsonInterval wilson_interval(int k, int n, double z = 1.959963985);

// one-sided pooled z-test for H1: p1 > p2
double two_proportion_p_value(int k1, int n1, int k2, int n2);

// exact two-sided binomial test of rate p0
double binomial_test_two_sided(int k, int n, double p0);

// --- report ----------------------------------------------------------------------

extern const char* const kEvalCsvHeader;

struct EvalRow {
    std::string scenario;
    std::string size_bin;
    double identity_top1 = 0.0;
    double identity_margin = 0.0;
    double location_iou = 0.0;
    double pose_mae_rad = 0.0;
    double expr_mae = 0.0;
    int n_samples = 0;
    WilsonInterval top1_ci;  // reported alongside, not part of the CSV schema
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::string config_digest, model_digest;

    std::string to_csv() const;
    void save(const std::string& dir, const std::string& name) const;  // CSV + digest sidecar
};

// --- scenario running ---------------------------------------------------------------

struct ScenarioConfig {
    std::string label = "identity";
    double size_lo = 0.25, size_hi = 0.5;
    std::optional<double> point_ratio;  // when set, bbox side = round(ratio * image)
    int n = 200;
    uint64_t seed = 0;
};

struct SampleRecord {
    int requested_identity = -1;
    int oracle_argmax = -1;
    double margin = 0.0;
    double iou = 0.0;
    double pose_err = 0.0, expr_err = 0.0;
    SceneSpec target;
    Image reference, generated;
    Tensor pe_map;   // condition visualization
    Plane loc_mask;
};

std::vector<SampleRecord> run_generation_scenario(TrainedModel& model, const OracleModel& oracle,
                                                  const ScenarioConfig& sc,
                                                  const GuidanceConfig& gcfg);

EvalRow summarize_records(const std::string& scenario, const std::string& size_bin,
                          const std::vector<SampleRecord>& records);

// --- operations ----------------------------------------------------------------------

// one row per size bin; point bins evaluate at exact side = round(r*S)
EvalReport eval_identity(TrainedModel& model, const OracleModel& oracle,
                         const std::vector<double>& point_bins, int n, uint64_t seed,
                         const GuidanceConfig& gcfg);

EvalReport eval_identity_range(TrainedModel& model, const OracleModel& oracle, double lo,
                               double hi, int n, uint64_t seed, const GuidanceConfig& gcfg,
                               const std::string& label = "identity");

// location / pose / expression control at mixed regular sizes
EvalReport eval_control(TrainedModel& model, const OracleModel& oracle, int n, uint64_t seed,
                        const GuidanceConfig& gcfg);

struct AblationResult {
    EvalReport report;           // rows: full, wo_local, wo_global in the small-face bin
    double p_full_vs_wo_local;   // one-sided, H1: full > w/o local
};

AblationResult eval_ablation(TrainedModel& full, TrainedModel& wo_local, TrainedModel& wo_global,
                             const OracleModel& oracle, int n, uint64_t seed,
                             const GuidanceConfig& gcfg);

struct MultiPersonResult {
    EvalReport report;  // per-slot rows plus the matched single-person control row
    std::vector<SampleRecord> slot_records[2];
};

MultiPersonResult eval_multiperson(TrainedModel& model, const OracleModel& oracle, int n,
                                   bool overlap, uint64_t seed, const GuidanceConfig& gcfg);

// PNG contact sheet (reference | condition maps | generation per cell) + CSV
void emit_figures(const EvalReport& report, const std::vector<SampleRecord>& records,
                  const std::string& dir, const std::string& name);

}  // namespace glyphdiff
