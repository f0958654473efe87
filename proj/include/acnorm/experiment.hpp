#pragma once

#include <optional>
#include <string>
#include <vector>

#include "acnorm/config.hpp"
#include "acnorm/transfer.hpp"

namespace acnorm {

// One pretraining source. random_init builds an untrained checkpoint.
struct SourceSpec {
    std::string name;
    bool random_init = false;
    SyntheticTaskSpec task;
};

// Optional checkpoint manipulation between pretraining and fine-tuning.
struct CkptVariantSpec {
    std::string name = "original";
    bool shuffle = false;
    std::uint64_t shuffle_seed = 0;
    bool mask = false;
    double mask_ratio = 0.0;
    std::uint64_t mask_seed = 0;
};

// One fine-tuning arm (norm kind plus optional overrides).
struct ArmSpec {
    std::string name;
    NormKind norm = NormKind::vanilla_bn;
    std::optional<std::string> freeze; // "full_ft" | "norm_only"
    std::optional<bool> detach_calibration;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::vector<std::uint64_t> seeds = {1};
    ArchSpec model;
    SyntheticTaskSpec target_task;
    std::vector<SourceSpec> sources;
    TrainConfig pretrain_cfg;
    TrainConfig finetune_cfg;
    std::vector<CkptVariantSpec> ckpt_variants = {{}};
    std::vector<ArmSpec> arms;
    bool estimate_enabled = false;
    std::string estimate_arm; // ground-truth arm for the ranking
    std::string probe_layer;  // empty: deepest encoder norm
    bool probe_heatmaps = false;
    bool probe_deltas = false;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

struct ArmResult {
    std::uint64_t seed = 0;
    std::string source, variant, arm;
    MetricsRecord metrics;
    std::optional<double> probe_ac_corr;
    bool failed = false;
    std::string error;
};

struct SeedRanking {
    std::uint64_t seed = 0;
    std::vector<TransferScore> scores;
    std::vector<double> ground_truth;
    RankingReport report;
};

struct ExperimentReport {
    std::string outdir;
    std::vector<ArmResult> rows;
    std::vector<SeedRanking> rankings;
    int n_errors = 0;
};

// Orchestrates pretrain -> (shuffle/mask) -> finetune per arm, emits
// results.csv, per-run artifacts, plots and (optionally) the transferability
// ranking. Partial failures are recorded per arm and leave the rest running.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::string& outdir);

// The calibration matrix a norm layer of this kind is currently using
// (affine or statistics signatures, or the trainable parameter).
Tensor layer_used_calibration(const ModelGraph& model, const std::string& layer_name);

} // namespace acnorm
