#include "acnorm/variants.hpp"

#include <cmath>

namespace acnorm {

std::vector<double> scnorm_signature(const NormStats& stats, Mode mode) {
    const std::size_t k = stats.channels();
    std::vector<double> z(k);
    const auto& mean = (mode == Mode::training) ? stats.batch_mean : stats.moving_mean;
    const auto& var = (mode == Mode::training) ? stats.batch_var : stats.moving_var;
    for (std::size_t j = 0; j < k; ++j) z[j] = mean[j] / std::sqrt(var[j] + stats.eps);
    return z;
}

Tensor bn_forward(const Tensor& x, ACNormLayerState& state) {
    return norm_forward(x, state, calib_spec_for(NormKind::vanilla_bn, state.config));
}

Tensor variant_forward(const Tensor& x, NormLayerState& state, NormCache* cache) {
    const CalibSpec spec = calib_spec_for(state.kind, state.core.config);
    switch (state.kind) {
        case NormKind::vanilla_bn:
        case NormKind::acnorm:
        case NormKind::ac_diag:
        case NormKind::ac_non_sparse:
            return norm_forward(x, state.core, spec, nullptr, nullptr, nullptr, cache);
        case NormKind::sc_norm: {
            if (state.src_moving_mean.size() != state.channels())
                throw ConfigError("variant_forward: sc_norm needs frozen source statistics");
            // Source side always reads the pretrained moving statistics.
            NormStats src = NormStats::fresh(state.channels(), state.core.stats.momentum,
                                             state.core.stats.eps);
            src.moving_mean = state.src_moving_mean;
            src.moving_var = state.src_moving_var;
            const std::vector<double> z_s = scnorm_signature(src, Mode::inference);
            return norm_forward(x, state.core, spec, nullptr, &z_s, nullptr, cache);
        }
        case NormKind::ac_trainable_c:
            if (state.c_opt.numel() == 0)
                throw ConfigError("variant_forward: ac_trainable_c needs an initialized C");
            return norm_forward(x, state.core, spec, nullptr, nullptr, &state.c_opt, cache);
    }
    throw ConfigError("variant_forward: unknown norm kind");
}

VariantGrads variant_backward(const Tensor& upstream, const NormLayerState& state,
                              const NormCache& cache) {
    const CalibSpec spec = calib_spec_for(state.kind, state.core.config);
    NormGrads g = norm_backward(upstream, state.core, spec, cache,
                                state.kind == NormKind::ac_trainable_c);
    VariantGrads out;
    out.x = std::move(g.x);
    out.gamma_t = std::move(g.gamma_t);
    out.beta_t = std::move(g.beta_t);
    out.c_opt = std::move(g.c_param);
    return out;
}

Tensor initial_trainable_c(const ACNormLayerState& core) {
    const std::vector<double> z_t = domain_signature(core.target, core.config.eps);
    const std::vector<double> z_s = domain_signature(core.source, core.config.eps);
    return sparsify(calibration_matrix(z_t, z_s, core.config.temperature)).values;
}

} // namespace acnorm
