#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "acnorm/errors.hpp"
#include "acnorm/tensor.hpp"

namespace acnorm {

enum class Mode { training, inference };

enum class Role { source, target };

// Per-channel scale/shift pair of a normalization layer. Source affines come
// from a pretrained checkpoint and stay frozen; target affines train.
struct AffineParams {
    std::vector<double> gamma;
    std::vector<double> beta;
    Role role = Role::target;

    std::size_t channels() const { return gamma.size(); }

    static AffineParams identity(std::size_t k, Role role) {
        AffineParams a;
        a.gamma.assign(k, 1.0);
        a.beta.assign(k, 0.0);
        a.role = role;
        return a;
    }

    void validate() const {
        if (gamma.size() != beta.size() || gamma.empty())
            throw ConfigError("AffineParams: gamma/beta must be non-empty and equal length");
    }
};

// Per-channel mini-batch and moving statistics with momentum bookkeeping.
struct NormStats {
    std::vector<double> batch_mean;
    std::vector<double> batch_var;
    std::vector<double> moving_mean;
    std::vector<double> moving_var;
    double momentum = 0.1; // moving <- (1 - momentum) * moving + momentum * batch
    double eps = 1e-5;

    std::size_t channels() const { return moving_mean.size(); }

    static NormStats fresh(std::size_t k, double momentum = 0.1, double eps = 1e-5) {
        NormStats s;
        s.batch_mean.assign(k, 0.0);
        s.batch_var.assign(k, 0.0);
        s.moving_mean.assign(k, 0.0);
        s.moving_var.assign(k, 1.0);
        s.momentum = momentum;
        s.eps = eps;
        return s;
    }

    void validate() const {
        if (momentum <= 0.0 || momentum > 1.0) throw ConfigError("NormStats: momentum must be in (0,1]");
        if (eps <= 0.0) throw ConfigError("NormStats: eps must be positive");
        for (double v : batch_var)
            if (v < 0.0) throw ConfigError("NormStats: negative batch variance");
        for (double v : moving_var)
            if (v < 0.0) throw ConfigError("NormStats: negative moving variance");
    }
};

// K x K row-softmax transferability matrix, before or after sparsification.
struct CalibrationMatrix {
    Tensor values; // K x K
    bool sparsified = false;

    std::size_t channels() const { return values.ndim() == 2 ? values.dim(0) : 0; }
};

struct ACNormConfig {
    double temperature = 1.0;
    double eps = 1e-5;
    bool detach_calibration = false; // ablation: block gradients through C
    double momentum = 0.1;

    void validate() const {
        if (temperature <= 0.0) throw ConfigError("ACNormConfig: temperature must be positive");
        if (eps <= 0.0) throw ConfigError("ACNormConfig: eps must be positive");
        if (momentum <= 0.0 || momentum > 1.0) throw ConfigError("ACNormConfig: momentum must be in (0,1]");
    }
};

struct ACNormLayerState {
    AffineParams source; // role == source, immutable
    AffineParams target; // role == target, trainable
    NormStats stats;
    ACNormConfig config;
    Mode mode = Mode::training;

    std::size_t channels() const { return target.channels(); }

    // Target affines start as an exact copy of the source affines.
    static ACNormLayerState from_source(const AffineParams& src, ACNormConfig cfg = {}) {
        ACNormLayerState st;
        st.source = src;
        st.source.role = Role::source;
        st.target = src;
        st.target.role = Role::target;
        st.stats = NormStats::fresh(src.channels(), cfg.momentum, cfg.eps);
        st.config = cfg;
        return st;
    }

    void validate() const {
        source.validate();
        target.validate();
        config.validate();
        if (source.channels() != target.channels() || source.channels() != stats.channels())
            throw ConfigError("ACNormLayerState: channel counts disagree");
    }
};

enum class NormKind {
    vanilla_bn,
    acnorm,
    sc_norm,
    ac_diag,
    ac_non_sparse,
    ac_trainable_c,
};

NormKind norm_kind_from_string(const std::string& s);
std::string to_string(NormKind k);

} // namespace acnorm
