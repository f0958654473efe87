#include "acnorm/probe.hpp"

#include <cmath>

#include "acnorm/rng.hpp"

namespace acnorm {

namespace {

constexpr double kProbeEps = 1e-5;

double mean_abs_diff(const Tensor& a, const Tensor& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) sum += std::abs(a[i] - b[i]);
    return a.numel() ? sum / double(a.numel()) : 0.0;
}

std::vector<double> affine_signature(const Tensor& beta, const Tensor& gamma) {
    std::vector<double> z(beta.numel());
    for (std::size_t j = 0; j < z.size(); ++j)
        z[j] = beta[j] / std::sqrt(gamma[j] * gamma[j] + kProbeEps);
    return z;
}

std::vector<double> stats_signature(const Tensor& mean, const Tensor& var) {
    std::vector<double> z(mean.numel());
    for (std::size_t j = 0; j < z.size(); ++j)
        z[j] = mean[j] / std::sqrt(var[j] + kProbeEps);
    return z;
}

double mean_abs_z_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double sum = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) sum += std::abs(a[j] - b[j]);
    return a.empty() ? 0.0 : sum / double(a.size());
}

} // namespace

std::vector<LayerDelta> layer_deltas(const Checkpoint& before, const Checkpoint& after) {
    const std::string arch_a = before.manifest_at("arch");
    const std::string arch_b = after.manifest_at("arch");
    if (arch_a != arch_b) throw ProbeError("layer_deltas: architecture mismatch");

    const ArchSpec arch = ArchSpec::from_canonical(arch_a);
    auto tensor = [](const Checkpoint& c, const std::string& name) -> const Tensor& {
        auto it = c.tensors.find(name);
        if (it == c.tensors.end()) throw ProbeError("layer_deltas: missing tensor " + name);
        return it->second;
    };

    std::vector<LayerDelta> deltas;
    for (const auto& d : layout_from_arch(arch)) {
        if (d.kind == LayerKind::conv) {
            LayerDelta ld;
            ld.layer = d.name;
            ld.is_norm = false;
            const double dw = mean_abs_diff(tensor(before, d.name + ".w"), tensor(after, d.name + ".w"));
            const double db = mean_abs_diff(tensor(before, d.name + ".b"), tensor(after, d.name + ".b"));
            const double nw = double(tensor(before, d.name + ".w").numel());
            const double nb = double(tensor(before, d.name + ".b").numel());
            ld.kernel_delta = (dw * nw + db * nb) / (nw + nb);
            deltas.push_back(ld);
        } else if (d.kind == LayerKind::norm) {
            LayerDelta ld;
            ld.layer = d.name;
            ld.is_norm = true;
            const auto z_before = affine_signature(tensor(before, d.name + ".beta"),
                                                   tensor(before, d.name + ".gamma"));
            const auto z_after = affine_signature(tensor(after, d.name + ".beta"),
                                                  tensor(after, d.name + ".gamma"));
            ld.affine_delta = mean_abs_z_diff(z_before, z_after);
            const auto s_before = stats_signature(tensor(before, d.name + ".moving_mean"),
                                                  tensor(before, d.name + ".moving_var"));
            const auto s_after = stats_signature(tensor(after, d.name + ".moving_mean"),
                                                 tensor(after, d.name + ".moving_var"));
            ld.stats_delta = mean_abs_z_diff(s_before, s_after);
            deltas.push_back(ld);
        }
    }
    return deltas;
}

StatPropagationCheck verify_stat_propagation(const AffineParams& prev_affines,
                                             const std::vector<double>& conv_w,
                                             std::size_t n_samples, std::uint64_t seed) {
    const std::size_t k = prev_affines.channels();
    if (conv_w.size() != k)
        throw InputError("verify_stat_propagation: filter length must match channels");
    if (n_samples < 2) throw InputError("verify_stat_propagation: need n_samples >= 2");

    StatPropagationCheck out;
    for (std::size_t j = 0; j < k; ++j) {
        out.mu_pred += conv_w[j] * prev_affines.beta[j];
        out.var_pred += conv_w[j] * conv_w[j] * prev_affines.gamma[j] * prev_affines.gamma[j];
    }

    Rng rng(seed);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        double v = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double h = rng.normal();
            v += conv_w[j] * (prev_affines.gamma[j] * h + prev_affines.beta[j]);
        }
        sum += v;
        sum_sq += v * v;
    }
    out.mu_emp = sum / double(n_samples);
    out.var_emp = sum_sq / double(n_samples) - out.mu_emp * out.mu_emp;
    return out;
}

} // namespace acnorm
