#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "orthopred/augment.hpp"
#include "orthopred/dataset.hpp"
#include "orthopred/metrics.hpp"
#include "orthopred/predictor.hpp"

namespace orthopred {

// One flat key=value file configures the whole pipeline; '#' starts a
// comment, unknown keys are rejected. Every component seed derives from the
// master seed, so a config plus a dataset pins a run exactly.
struct PipelineConfig {
    std::uint64_t master_seed = 12345;

    int model_modes = 300;
    int model_resolution = 24;

    int cohort_size = 160;
    DeformityConfig deformity; // seed filled from master_seed

    LossWeights loss;
    TrainConfig train;     // loss + seed filled in resolve()
    AugmentConfig augment; // seed filled in resolve()
    bool augment_enabled = true;
    FitConfig fit;

    ChamferVariant chamfer = ChamferVariant::SquaredMm2;
    int cv_folds = 5;
    int animate_steps = 10;
};

// Deterministic per-component seed derived from the master seed.
std::uint64_t component_seed(std::uint64_t master, std::string_view component);

PipelineConfig default_pipeline_config();
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
// "key=value"; throws ConfigError on unknown keys or unparsable values.
void apply_config_override(PipelineConfig& config, const std::string& assignment);
// Re-derives component seeds and copies shared sub-configs; call after the
// last override.
void resolve_pipeline_config(PipelineConfig& config);

struct EvaluateRow {
    std::string name;
    MetricStats hd, cd;
};

// Face-masked HD/CD between predicted and ground-truth post faces over a
// dataset; a null params pointer evaluates the identity baseline
// (prediction = preoperative code).
EvaluateRow evaluate_pairs(const MorphableModel& model, std::span<const PatientPair> pairs,
                           const MlpParams* params, ChamferVariant variant, std::string name);

void print_evaluate_table(std::span<const EvaluateRow> rows);

struct AblationRow {
    std::string name;
    double hd_mean = 0.0;
    double cd_mean = 0.0;
    int data_amount = 0; // training pairs after augmentation
};

// Trains six variants on one held-out split: the full pipeline, each loss
// term removed (weight -> 0), and augmentation removed. All variants share
// the split and the training seed.
std::vector<AblationRow> run_ablation(const MorphableModel& model,
                                      std::span<const PatientPair> pairs,
                                      const PipelineConfig& config);

void print_ablation_table(std::span<const AblationRow> rows);

} // namespace orthopred
