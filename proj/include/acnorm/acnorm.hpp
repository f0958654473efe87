#pragma once

#include <utility>
#include <vector>

#include "acnorm/types.hpp"

namespace acnorm {

// ---------------------------------------------------------------------------
// Core layer operations.
// ---------------------------------------------------------------------------

// Standardizes x (N rows, K channels) per channel. Training mode uses
// mini-batch statistics, stores them in stats.batch_* and folds them into the
// moving averages; inference mode uses the moving statistics and mutates
// nothing. Training requires N >= 2.
Tensor standardize(const Tensor& x, NormStats& stats, Mode mode);

// Per-channel domain signature z = beta / sqrt(gamma^2 + eps).
std::vector<double> domain_signature(const AffineParams& affines, double eps);

// Row-softmax over negative |z_t[p] - z_s[q]| / t. Every row sums to 1.
CalibrationMatrix calibration_matrix(const std::vector<double>& z_t,
                                     const std::vector<double>& z_s, double t);

// Keeps entries at least as large as the row's diagonal entry, zeroes the
// rest. Ties are retained; the diagonal always survives.
CalibrationMatrix sparsify(const CalibrationMatrix& c);

// gamma_c = C * gamma_t, beta_c = C * beta_t.
std::pair<std::vector<double>, std::vector<double>>
recalibrate(const CalibrationMatrix& c, const AffineParams& target);

// Full layer: y = (gamma_t * xhat + beta_t) + (gamma_c * xhat + beta_c),
// with C recomputed from the current affines on every call.
Tensor acnorm_forward(const Tensor& x, ACNormLayerState& state);

struct ACNormGradients {
    Tensor x;
    std::vector<double> gamma_t;
    std::vector<double> beta_t;
};

// Gradients of L = sum(upstream * y) with respect to x, gamma_t and beta_t,
// in training mode. The sparsification mask is a constant of the forward
// pass; gradients flow through the softmax unless config.detach_calibration.
// Moving statistics are left untouched.
ACNormGradients acnorm_gradients(const Tensor& x, const ACNormLayerState& state,
                                 const Tensor& upstream);

// ---------------------------------------------------------------------------
// Shared kernel. The ablation variants reuse the exact same forward/backward
// path and differ only in how the calibration matrix is produced and masked.
// ---------------------------------------------------------------------------

struct CalibSpec {
    enum class Kind { none, softmax, parameter };
    enum class Mask { sparsify, diagonal, keep_all };
    enum class Signature { affine, stats };

    Kind kind = Kind::none;
    Mask mask = Mask::sparsify;
    Signature signature = Signature::affine;
    bool grad_through_z = true; // only meaningful for softmax-from-affines
};

struct NormCache {
    Tensor xhat;                  // N x K
    std::vector<double> inv_std;  // 1 / sqrt(var + eps) actually used
    bool batch_stats = false;
    std::vector<double> z_t, z_s;
    Tensor c_soft;                // pre-mask softmax, or the C parameter
    Tensor c_used;                // after mask (what recalibration used)
    std::vector<double> gamma_c, beta_c;
    std::vector<double> eff_gamma; // gamma_t + gamma_c
};

struct NormGrads {
    Tensor x;
    std::vector<double> gamma_t;
    std::vector<double> beta_t;
    Tensor c_param; // only filled on request (trainable-C variant)
};

// z_t/z_s overrides let callers inject signatures (the statistics-based
// variant and tests use this). c_param supplies the trainable calibration
// matrix when spec.kind == parameter.
Tensor norm_forward(const Tensor& x, ACNormLayerState& state, const CalibSpec& spec,
                    const std::vector<double>* z_t_override = nullptr,
                    const std::vector<double>* z_s_override = nullptr,
                    const Tensor* c_param = nullptr, NormCache* cache = nullptr);

NormGrads norm_backward(const Tensor& upstream, const ACNormLayerState& state,
                        const CalibSpec& spec, const NormCache& cache,
                        bool want_c_grad = false);

CalibSpec calib_spec_for(NormKind kind, const ACNormConfig& config);

} // namespace acnorm
