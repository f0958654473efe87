#include "acnorm/acnorm.hpp"

#include <algorithm>
#include <cmath>

namespace acnorm {

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "vanilla_bn") return NormKind::vanilla_bn;
    if (s == "acnorm") return NormKind::acnorm;
    if (s == "sc_norm") return NormKind::sc_norm;
    if (s == "ac_diag") return NormKind::ac_diag;
    if (s == "ac_non_sparse") return NormKind::ac_non_sparse;
    if (s == "ac_trainable_c") return NormKind::ac_trainable_c;
    throw ConfigError("unknown norm kind: " + s);
}

std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::vanilla_bn: return "vanilla_bn";
        case NormKind::acnorm: return "acnorm";
        case NormKind::sc_norm: return "sc_norm";
        case NormKind::ac_diag: return "ac_diag";
        case NormKind::ac_non_sparse: return "ac_non_sparse";
        case NormKind::ac_trainable_c: return "ac_trainable_c";
    }
    throw ConfigError("unknown norm kind enum value");
}

Tensor standardize(const Tensor& x, NormStats& stats, Mode mode) {
    if (x.ndim() != 2) throw InputError("standardize: expected an N x K tensor");
    const std::size_t n = x.dim(0), k = x.dim(1);
    if (n < 1) throw InvalidBatchError("standardize: empty batch");
    if (k != stats.channels()) throw InputError("standardize: channel count mismatch");
    if (!x.all_finite()) throw NumericError("standardize: non-finite input");

    Tensor xhat({n, k});
    if (mode == Mode::training) {
        if (n < 2) throw InvalidBatchError("standardize: training mode needs N >= 2");
        for (std::size_t j = 0; j < k; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
            mean /= double(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = x(i, j) - mean;
                var += d * d;
            }
            var /= double(n);
            stats.batch_mean[j] = mean;
            stats.batch_var[j] = var;
            const double inv = 1.0 / std::sqrt(var + stats.eps);
            for (std::size_t i = 0; i < n; ++i) xhat(i, j) = (x(i, j) - mean) * inv;
            stats.moving_mean[j] = (1.0 - stats.momentum) * stats.moving_mean[j] + stats.momentum * mean;
            stats.moving_var[j] = (1.0 - stats.momentum) * stats.moving_var[j] + stats.momentum * var;
        }
    } else {
        for (std::size_t j = 0; j < k; ++j) {
            const double inv = 1.0 / std::sqrt(stats.moving_var[j] + stats.eps);
            const double mean = stats.moving_mean[j];
            for (std::size_t i = 0; i < n; ++i) xhat(i, j) = (x(i, j) - mean) * inv;
        }
    }
    return xhat;
}

std::vector<double> domain_signature(const AffineParams& affines, double eps) {
    if (eps <= 0.0) throw ConfigError("domain_signature: eps must be positive");
    const std::size_t k = affines.channels();
    std::vector<double> z(k);
    for (std::size_t j = 0; j < k; ++j)
        z[j] = affines.beta[j] / std::sqrt(affines.gamma[j] * affines.gamma[j] + eps);
    return z;
}

CalibrationMatrix calibration_matrix(const std::vector<double>& z_t,
                                     const std::vector<double>& z_s, double t) {
    if (t <= 0.0) throw ConfigError("calibration_matrix: temperature must be positive");
    if (z_t.size() != z_s.size() || z_t.empty())
        throw InputError("calibration_matrix: signature lengths must match and be >= 1");
    const std::size_t k = z_t.size();
    CalibrationMatrix c;
    c.values = Tensor({k, k});
    c.sparsified = false;
    for (std::size_t p = 0; p < k; ++p) {
        // Row-wise softmax of -|z_t[p] - z_s[q]| / t, shifted by the row max
        // for stability.
        double max_logit = -std::numeric_limits<double>::infinity();
        std::vector<double> logits(k);
        for (std::size_t q = 0; q < k; ++q) {
            logits[q] = -std::abs(z_t[p] - z_s[q]) / t;
            max_logit = std::max(max_logit, logits[q]);
        }
        double denom = 0.0;
        for (std::size_t q = 0; q < k; ++q) {
            logits[q] = std::exp(logits[q] - max_logit);
            denom += logits[q];
        }
        for (std::size_t q = 0; q < k; ++q) c.values(p, q) = logits[q] / denom;
    }
    return c;
}

CalibrationMatrix sparsify(const CalibrationMatrix& c) {
    if (c.sparsified) throw InputError("sparsify: matrix is already sparsified");
    const std::size_t k = c.channels();
    CalibrationMatrix out;
    out.values = Tensor({k, k});
    out.sparsified = true;
    for (std::size_t p = 0; p < k; ++p) {
        const double diag = c.values(p, p);
        for (std::size_t q = 0; q < k; ++q) {
            const double v = c.values(p, q);
            out.values(p, q) = (v >= diag) ? v : 0.0;
        }
    }
    return out;
}

std::pair<std::vector<double>, std::vector<double>>
recalibrate(const CalibrationMatrix& c, const AffineParams& target) {
    if (!c.sparsified) throw InputError("recalibrate: expected a sparsified matrix");
    const std::size_t k = c.channels();
    if (k != target.channels()) throw InputError("recalibrate: dimension mismatch");
    std::vector<double> gamma_c(k, 0.0), beta_c(k, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        double g = 0.0, b = 0.0;
        for (std::size_t q = 0; q < k; ++q) {
            g += c.values(p, q) * target.gamma[q];
            b += c.values(p, q) * target.beta[q];
        }
        gamma_c[p] = g;
        beta_c[p] = b;
    }
    return {std::move(gamma_c), std::move(beta_c)};
}

CalibSpec calib_spec_for(NormKind kind, const ACNormConfig& config) {
    CalibSpec spec;
    switch (kind) {
        case NormKind::vanilla_bn:
            spec.kind = CalibSpec::Kind::none;
            break;
        case NormKind::acnorm:
            spec.kind = CalibSpec::Kind::softmax;
            spec.mask = CalibSpec::Mask::sparsify;
            spec.grad_through_z = !config.detach_calibration;
            break;
        case NormKind::sc_norm:
            spec.kind = CalibSpec::Kind::softmax;
            spec.mask = CalibSpec::Mask::sparsify;
            spec.signature = CalibSpec::Signature::stats;
            spec.grad_through_z = false; // statistics are not part of the graph
            break;
        case NormKind::ac_diag:
            spec.kind = CalibSpec::Kind::softmax;
            spec.mask = CalibSpec::Mask::diagonal;
            spec.grad_through_z = !config.detach_calibration;
            break;
        case NormKind::ac_non_sparse:
            spec.kind = CalibSpec::Kind::softmax;
            spec.mask = CalibSpec::Mask::keep_all;
            spec.grad_through_z = !config.detach_calibration;
            break;
        case NormKind::ac_trainable_c:
            spec.kind = CalibSpec::Kind::parameter;
            break;
    }
    return spec;
}

namespace {

Tensor apply_mask(const Tensor& c_soft, CalibSpec::Mask mask) {
    const std::size_t k = c_soft.dim(0);
    Tensor out({k, k});
    switch (mask) {
        case CalibSpec::Mask::sparsify:
            for (std::size_t p = 0; p < k; ++p) {
                const double diag = c_soft(p, p);
                for (std::size_t q = 0; q < k; ++q) {
                    const double v = c_soft(p, q);
                    out(p, q) = (v >= diag) ? v : 0.0;
                }
            }
            break;
        case CalibSpec::Mask::diagonal:
            for (std::size_t p = 0; p < k; ++p) out(p, p) = c_soft(p, p);
            break;
        case CalibSpec::Mask::keep_all:
            out = c_soft;
            break;
    }
    return out;
}

// z for the statistics signature: mini-batch stats in training, moving stats
// in inference.
std::vector<double> stats_signature(const NormStats& stats, Mode mode) {
    const std::size_t k = stats.channels();
    std::vector<double> z(k);
    const auto& mean = (mode == Mode::training) ? stats.batch_mean : stats.moving_mean;
    const auto& var = (mode == Mode::training) ? stats.batch_var : stats.moving_var;
    for (std::size_t j = 0; j < k; ++j) z[j] = mean[j] / std::sqrt(var[j] + stats.eps);
    return z;
}

} // namespace

Tensor norm_forward(const Tensor& x, ACNormLayerState& state, const CalibSpec& spec,
                    const std::vector<double>* z_t_override,
                    const std::vector<double>* z_s_override,
                    const Tensor* c_param, NormCache* cache) {
    state.validate();
    const std::size_t k = state.channels();

    NormCache local;
    NormCache& c = cache ? *cache : local;

    c.batch_stats = (state.mode == Mode::training);
    c.xhat = standardize(x, state.stats, state.mode);
    c.inv_std.resize(k);
    const auto& var = c.batch_stats ? state.stats.batch_var : state.stats.moving_var;
    for (std::size_t j = 0; j < k; ++j) c.inv_std[j] = 1.0 / std::sqrt(var[j] + state.stats.eps);

    const std::size_t n = x.dim(0);
    Tensor y({n, k});

    if (spec.kind == CalibSpec::Kind::none) {
        for (std::size_t j = 0; j < k; ++j) {
            const double g = state.target.gamma[j], b = state.target.beta[j];
            for (std::size_t i = 0; i < n; ++i) y(i, j) = g * c.xhat(i, j) + b;
        }
        c.eff_gamma = state.target.gamma;
        return y;
    }

    if (spec.kind == CalibSpec::Kind::parameter) {
        if (!c_param || c_param->ndim() != 2 || c_param->dim(0) != k || c_param->dim(1) != k)
            throw ConfigError("norm_forward: trainable calibration requires a K x K parameter");
        c.c_soft = *c_param;
        c.c_used = *c_param;
    } else {
        if (z_t_override) {
            c.z_t = *z_t_override;
        } else if (spec.signature == CalibSpec::Signature::stats) {
            c.z_t = stats_signature(state.stats, state.mode);
        } else {
            c.z_t = domain_signature(state.target, state.config.eps);
        }
        if (z_s_override) {
            c.z_s = *z_s_override;
        } else {
            // The statistics signature of the frozen source side must be fed
            // via the override by the caller (the core state has no source
            // statistics); default to the affine signature.
            c.z_s = domain_signature(state.source, state.config.eps);
        }
        CalibrationMatrix soft = calibration_matrix(c.z_t, c.z_s, state.config.temperature);
        c.c_soft = soft.values;
        c.c_used = apply_mask(c.c_soft, spec.mask);
    }

    // Recalibration and residual output.
    c.gamma_c.assign(k, 0.0);
    c.beta_c.assign(k, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        double g = 0.0, b = 0.0;
        for (std::size_t q = 0; q < k; ++q) {
            g += c.c_used(p, q) * state.target.gamma[q];
            b += c.c_used(p, q) * state.target.beta[q];
        }
        c.gamma_c[p] = g;
        c.beta_c[p] = b;
    }
    c.eff_gamma.resize(k);
    for (std::size_t j = 0; j < k; ++j) c.eff_gamma[j] = state.target.gamma[j] + c.gamma_c[j];

    for (std::size_t j = 0; j < k; ++j) {
        const double gt = state.target.gamma[j], bt = state.target.beta[j];
        const double gc = c.gamma_c[j], bc = c.beta_c[j];
        for (std::size_t i = 0; i < n; ++i) {
            const double xh = c.xhat(i, j);
            y(i, j) = (gt * xh + bt) + (gc * xh + bc);
        }
    }
    return y;
}

NormGrads norm_backward(const Tensor& upstream, const ACNormLayerState& state,
                        const CalibSpec& spec, const NormCache& cache,
                        bool want_c_grad) {
    const std::size_t n = upstream.dim(0), k = upstream.dim(1);

    // Per-channel reductions of the upstream gradient.
    std::vector<double> s1(k, 0.0); // sum_n g
    std::vector<double> s2(k, 0.0); // sum_n g * xhat
    for (std::size_t j = 0; j < k; ++j) {
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = upstream(i, j);
            a += g;
            b += g * cache.xhat(i, j);
        }
        s1[j] = a;
        s2[j] = b;
    }

    NormGrads grads;
    grads.gamma_t.assign(k, 0.0);
    grads.beta_t.assign(k, 0.0);

    if (spec.kind == CalibSpec::Kind::none) {
        grads.gamma_t = s2;
        grads.beta_t = s1;
    } else {
        // Direct affine path plus the recalibration path through fixed C.
        for (std::size_t q = 0; q < k; ++q) {
            double g = s2[q], b = s1[q];
            for (std::size_t p = 0; p < k; ++p) {
                g += cache.c_used(p, q) * s2[p];
                b += cache.c_used(p, q) * s1[p];
            }
            grads.gamma_t[q] = g;
            grads.beta_t[q] = b;
        }

        if (spec.kind == CalibSpec::Kind::parameter) {
            if (want_c_grad) {
                grads.c_param = Tensor({k, k});
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t q = 0; q < k; ++q)
                        grads.c_param(p, q) = s2[p] * state.target.gamma[q] + s1[p] * state.target.beta[q];
            }
        } else if (spec.grad_through_z && spec.signature == CalibSpec::Signature::affine) {
            // Path through the softmax and the target signature. The mask is
            // a constant of the forward pass; |.| takes subgradient 0 at 0.
            const double t = state.config.temperature;
            const double eps = state.config.eps;
            for (std::size_t p = 0; p < k; ++p) {
                // dL/dC_used[p][q] restricted to retained entries.
                std::vector<double> d(k, 0.0);
                double dot = 0.0;
                for (std::size_t q = 0; q < k; ++q) {
                    if (cache.c_used(p, q) != 0.0)
                        d[q] = s2[p] * state.target.gamma[q] + s1[p] * state.target.beta[q];
                    dot += d[q] * cache.c_soft(p, q);
                }
                double dz = 0.0;
                for (std::size_t q = 0; q < k; ++q) {
                    const double e = cache.c_soft(p, q) * (d[q] - dot); // softmax row backward
                    const double diff = cache.z_t[p] - cache.z_s[q];
                    const double sgn = (diff > 0.0) ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                    dz += e * (-sgn / t);
                }
                const double gp = state.target.gamma[p];
                const double bp = state.target.beta[p];
                const double denom = gp * gp + eps;
                const double inv_sqrt = 1.0 / std::sqrt(denom);
                grads.beta_t[p] += dz * inv_sqrt;
                grads.gamma_t[p] += dz * (-bp * gp * inv_sqrt / denom);
            }
        }
    }

    // Input gradient. The effective scale (gamma_t + gamma_c) depends only on
    // parameters, so x sees the standard standardization backward.
    grads.x = Tensor({n, k});
    if (cache.batch_stats) {
        for (std::size_t j = 0; j < k; ++j) {
            const double a = cache.eff_gamma[j];
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double gh = upstream(i, j) * a;
                mean_g += gh;
                mean_gx += gh * cache.xhat(i, j);
            }
            mean_g /= double(n);
            mean_gx /= double(n);
            const double inv = cache.inv_std[j];
            for (std::size_t i = 0; i < n; ++i) {
                const double gh = upstream(i, j) * a;
                grads.x(i, j) = inv * (gh - mean_g - cache.xhat(i, j) * mean_gx);
            }
        }
    } else {
        for (std::size_t j = 0; j < k; ++j) {
            const double scale = cache.eff_gamma[j] * cache.inv_std[j];
            for (std::size_t i = 0; i < n; ++i) grads.x(i, j) = upstream(i, j) * scale;
        }
    }
    return grads;
}

Tensor acnorm_forward(const Tensor& x, ACNormLayerState& state) {
    return norm_forward(x, state, calib_spec_for(NormKind::acnorm, state.config));
}

ACNormGradients acnorm_gradients(const Tensor& x, const ACNormLayerState& state,
                                 const Tensor& upstream) {
    if (state.mode != Mode::training)
        throw ConfigError("acnorm_gradients: requires training mode");
    if (!upstream.same_shape(x)) throw InputError("acnorm_gradients: shape mismatch");

    // Forward on a scratch copy so moving statistics stay untouched.
    ACNormLayerState scratch = state;
    NormCache cache;
    const CalibSpec spec = calib_spec_for(NormKind::acnorm, state.config);
    norm_forward(x, scratch, spec, nullptr, nullptr, nullptr, &cache);
    NormGrads g = norm_backward(upstream, scratch, spec, cache);

    ACNormGradients out;
    out.x = std::move(g.x);
    out.gamma_t = std::move(g.gamma_t);
    out.beta_t = std::move(g.beta_t);
    return out;
}

} // namespace acnorm
