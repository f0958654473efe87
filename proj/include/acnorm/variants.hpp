#pragma once

#include "acnorm/acnorm.hpp"

namespace acnorm {

// Network-facing normalization layer state: the core state plus what the
// ablation variants need on top (frozen source statistics for sc_norm, the
// free calibration parameter for ac_trainable_c).
struct NormLayerState {
    NormKind kind = NormKind::vanilla_bn;
    ACNormLayerState core;
    std::vector<double> src_moving_mean;
    std::vector<double> src_moving_var;
    Tensor c_opt; // K x K, ac_trainable_c only

    std::size_t channels() const { return core.channels(); }
};

// Statistics-based signature z = mu / sqrt(var + eps); mini-batch statistics
// in training, moving statistics in inference.
std::vector<double> scnorm_signature(const NormStats& stats, Mode mode);

// Plain batch normalization on the target affines: y = gamma_t * xhat + beta_t.
Tensor bn_forward(const Tensor& x, ACNormLayerState& state);

// Dispatches on state.kind; acnorm and every ablation variant run through
// the shared kernel. cache is optional and enables variant_backward.
Tensor variant_forward(const Tensor& x, NormLayerState& state, NormCache* cache = nullptr);

struct VariantGrads {
    Tensor x;
    std::vector<double> gamma_t;
    std::vector<double> beta_t;
    Tensor c_opt; // empty unless kind == ac_trainable_c
};

VariantGrads variant_backward(const Tensor& upstream, const NormLayerState& state,
                              const NormCache& cache);

// Initializes the trainable calibration matrix to the sparsified softmax of
// the current signatures (target == source at surgery time).
Tensor initial_trainable_c(const ACNormLayerState& core);

} // namespace acnorm
