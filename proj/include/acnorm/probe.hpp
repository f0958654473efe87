#pragma once

#include <string>
#include <vector>

#include "acnorm/checkpoint.hpp"

namespace acnorm {

// Per-layer update magnitude between two checkpoints of the same
// architecture. Norm layers report affine and moving-statistic signature
// deltas; conv layers report the mean absolute change of {w, b}.
struct LayerDelta {
    std::string layer;
    bool is_norm = false;
    double affine_delta = 0.0;
    double stats_delta = 0.0;
    double kernel_delta = 0.0;
};

std::vector<LayerDelta> layer_deltas(const Checkpoint& before, const Checkpoint& after);

// Two-layer pipeline with identity activation: standard-normal channel
// inputs -> affine transform (gamma, beta) -> 1x1 conv with weights alpha.
// Predicted statistics of the convolved channel: mu = sum(alpha * beta),
// var = sum(alpha^2 * gamma^2).
struct StatPropagationCheck {
    double mu_pred = 0.0;
    double var_pred = 0.0;
    double mu_emp = 0.0;
    double var_emp = 0.0;
};

StatPropagationCheck verify_stat_propagation(const AffineParams& prev_affines,
                                             const std::vector<double>& conv_w,
                                             std::size_t n_samples, std::uint64_t seed);

} // namespace acnorm
