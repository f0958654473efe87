#pragma once

#include <string>
#include <vector>

#include "acnorm/train.hpp"

namespace acnorm {

// Sum of all entries of a calibration matrix (informative after
// sparsification; pre-sparsify row-stochastic matrices always sum to K).
double ac_corr(const CalibrationMatrix& c);

struct TransferScore {
    std::string checkpoint_id;
    double ac_corr_value = 0.0;
    std::string probe_layer;
    int epochs_adapted = 1;
};

// One-epoch adaptation protocol: AC-Norm surgery, exactly one epoch of
// fine-tuning with the given optimizer settings, then AC-Corr of the probe
// layer (default: deepest encoder norm layer). Never mutates the checkpoint.
TransferScore estimate_transferability(const Checkpoint& ckpt, const SyntheticTaskSpec& target,
                                       const TrainConfig& cfg,
                                       const std::string& probe_layer = "",
                                       const std::string& checkpoint_id = "");

struct RankingReport {
    double pearson = 0.0;
    double kendall_tau = 0.0;
    double weighted_tau = 0.0;
    bool ties_in_truth = false;
    std::vector<std::pair<double, double>> pairs; // (score, ground_truth)
};

double pearson_corr(const std::vector<double>& a, const std::vector<double>& b);

// tau-a = (concordant - discordant) / (n(n-1)/2); tie-adjusted denominator
// (tau-b) when either list has ties.
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

// Additive hyperbolic weighting: pair weight 1/(1+rank_i) + 1/(1+rank_j) with
// 0-based ranks assigned by ground truth descending.
double weighted_tau(const std::vector<double>& scores, const std::vector<double>& truth);

RankingReport rank_models(const std::vector<double>& scores,
                          const std::vector<double>& ground_truth);

} // namespace acnorm
