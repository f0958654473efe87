#include "acnorm/surgery.hpp"

#include <algorithm>
#include <cmath>

#include "acnorm/rng.hpp"

namespace acnorm {

ModelGraph swap_norm_layers(const ModelGraph& model, const Checkpoint& source_ckpt,
                            NormKind kind) {
    const ArchSpec ckpt_arch = arch_from_checkpoint(source_ckpt);
    if (ckpt_arch.canonical() != model.arch.canonical())
        throw SurgeryError("swap_norm_layers: architecture mismatch between model and checkpoint");

    ModelGraph out = build_model(model.arch, model.init_seed, kind, model.norm_config);

    // Carry over anything the caller's model already had under the same name
    // (notably the head when the checkpoint cannot provide one).
    for (auto& [name, tensor] : out.params) {
        auto it = model.params.find(name);
        if (it != model.params.end() && it->second.shape() == tensor.shape())
            tensor = it->second;
    }

    auto ckpt_tensor = [&](const std::string& name) -> const Tensor* {
        auto it = source_ckpt.tensors.find(name);
        return it == source_ckpt.tensors.end() ? nullptr : &it->second;
    };

    std::vector<std::string> problems;
    auto load = [&](const std::string& dst_name, const std::string& src_name, bool required) {
        const Tensor* src = ckpt_tensor(src_name);
        Tensor& dst = out.param(dst_name);
        if (!src) {
            if (required) problems.push_back(src_name + " (missing)");
            return;
        }
        if (src->shape() != dst.shape()) {
            if (required) problems.push_back(src_name + " (shape mismatch)");
            return;
        }
        dst = *src;
    };

    for (const auto& d : out.layers) {
        const bool head = is_head_param(d.name);
        switch (d.kind) {
            case LayerKind::conv:
            case LayerKind::dense:
                load(d.name + ".w", d.name + ".w", !head);
                load(d.name + ".b", d.name + ".b", !head);
                break;
            case LayerKind::norm: {
                // Source-side parameters come from the checkpoint's (trained)
                // affines and moving statistics.
                load(d.name + ".gamma", d.name + ".gamma", true);
                load(d.name + ".beta", d.name + ".beta", true);
                load(d.name + ".moving_mean", d.name + ".moving_mean", true);
                load(d.name + ".moving_var", d.name + ".moving_var", true);
                if (kind != NormKind::vanilla_bn) {
                    load(d.name + ".src_gamma", d.name + ".gamma", true);
                    load(d.name + ".src_beta", d.name + ".beta", true);
                    load(d.name + ".src_moving_mean", d.name + ".moving_mean", true);
                    load(d.name + ".src_moving_var", d.name + ".moving_var", true);
                }
                break;
            }
            default:
                break;
        }
    }
    if (!problems.empty()) {
        std::string msg = "swap_norm_layers: checkpoint incompatible:";
        for (const auto& p : problems) msg += " " + p;
        throw SurgeryError(msg);
    }

    if (kind == NormKind::ac_trainable_c) {
        for (const auto& d : out.layers) {
            if (d.kind != LayerKind::norm) continue;
            AffineParams src;
            src.gamma = out.param(d.name + ".src_gamma").vec();
            src.beta = out.param(d.name + ".src_beta").vec();
            src.role = Role::source;
            out.param(d.name + ".c_opt") =
                initial_trainable_c(ACNormLayerState::from_source(src, out.norm_config));
        }
    }
    return out;
}

namespace {

// Gather along the leading axis: out[p] = in[perm[p]].
Tensor gather_axis0(const Tensor& t, const std::vector<std::size_t>& perm) {
    Tensor out(t.shape());
    const std::size_t rows = t.dim(0);
    const std::size_t stride = t.numel() / rows;
    for (std::size_t p = 0; p < rows; ++p)
        for (std::size_t i = 0; i < stride; ++i)
            out[p * stride + i] = t[perm[p] * stride + i];
    return out;
}

// Gather along axis 1 (conv input channels or dense columns).
Tensor gather_axis1(const Tensor& t, const std::vector<std::size_t>& perm) {
    Tensor out(t.shape());
    const std::size_t d0 = t.dim(0), d1 = t.dim(1);
    const std::size_t inner = t.numel() / (d0 * d1);
    for (std::size_t a = 0; a < d0; ++a)
        for (std::size_t b = 0; b < d1; ++b)
            for (std::size_t i = 0; i < inner; ++i)
                out[(a * d1 + b) * inner + i] = t[(a * d1 + perm[b]) * inner + i];
    return out;
}

struct CkptWalk {
    ArchSpec arch;
    NormKind kind;
    std::vector<LayerDesc> layers;
};

CkptWalk walk(const Checkpoint& ckpt) {
    CkptWalk w;
    w.arch = arch_from_checkpoint(ckpt);
    w.kind = norm_kind_from_string(ckpt.manifest_at("norm_kind"));
    w.layers = layout_from_arch(w.arch);
    return w;
}

void permute_norm_params(Checkpoint& out, const std::string& norm_name, NormKind kind,
                         const std::vector<std::size_t>& perm) {
    for (const auto& pname : norm_param_names(norm_name, kind)) {
        auto it = out.tensors.find(pname);
        if (it == out.tensors.end()) continue;
        if (pname == norm_name + ".c_opt") {
            it->second = gather_axis1(gather_axis0(it->second, perm), perm);
        } else {
            it->second = gather_axis0(it->second, perm);
        }
    }
}

// Applies per-conv output permutations; fix_consumers selects the
// alignment-preserving variant.
Checkpoint apply_perms(const Checkpoint& ckpt, const LayerPerms& perms, bool fix_consumers) {
    const CkptWalk w = walk(ckpt);
    Checkpoint out = ckpt;
    for (std::size_t li = 0; li < w.layers.size(); ++li) {
        const LayerDesc& d = w.layers[li];
        if (d.kind != LayerKind::conv || is_head_param(d.name)) continue;
        auto pit = perms.find(d.name);
        if (pit == perms.end()) continue;
        const auto& perm = pit->second;
        if (perm.size() != std::size_t(d.out_ch))
            throw SurgeryError("channel permutation size mismatch for " + d.name);

        out.tensors[d.name + ".w"] = gather_axis0(out.tensors.at(d.name + ".w"), perm);
        out.tensors[d.name + ".b"] = gather_axis0(out.tensors.at(d.name + ".b"), perm);

        // The matching norm layer directly follows the conv.
        for (std::size_t lj = li + 1; lj < w.layers.size(); ++lj) {
            if (w.layers[lj].kind == LayerKind::norm) {
                permute_norm_params(out, w.layers[lj].name, w.kind, perm);
                break;
            }
            if (w.layers[lj].kind == LayerKind::conv) break;
        }

        if (fix_consumers) {
            for (std::size_t lj = li + 1; lj < w.layers.size(); ++lj) {
                if (w.layers[lj].kind == LayerKind::conv || w.layers[lj].kind == LayerKind::dense) {
                    out.tensors[w.layers[lj].name + ".w"] =
                        gather_axis1(out.tensors.at(w.layers[lj].name + ".w"), perm);
                    break;
                }
            }
        }
    }
    return out;
}

} // namespace

LayerPerms random_layer_perms(const Checkpoint& ckpt, std::uint64_t seed) {
    const CkptWalk w = walk(ckpt);
    LayerPerms perms;
    for (const auto& d : w.layers) {
        if (d.kind != LayerKind::conv || is_head_param(d.name)) continue;
        Rng rng(derive_seed(seed, "shuffle:" + d.name));
        perms[d.name] = rng.permutation(std::size_t(d.out_ch));
    }
    return perms;
}

Checkpoint shuffle_channels(const Checkpoint& ckpt, std::uint64_t seed) {
    return apply_perms(ckpt, random_layer_perms(ckpt, seed), /*fix_consumers=*/false);
}

Checkpoint shuffle_channels_with_perms(const Checkpoint& ckpt, const LayerPerms& perms) {
    return apply_perms(ckpt, perms, /*fix_consumers=*/false);
}

Checkpoint permute_channels_consistent(const Checkpoint& ckpt, std::uint64_t seed) {
    return apply_perms(ckpt, random_layer_perms(ckpt, seed), /*fix_consumers=*/true);
}

Checkpoint permute_channels_consistent_with_perms(const Checkpoint& ckpt,
                                                  const LayerPerms& perms) {
    return apply_perms(ckpt, perms, /*fix_consumers=*/true);
}

Checkpoint mask_channels(const Checkpoint& ckpt, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0) throw InputError("mask_channels: ratio must be in [0,1]");
    const CkptWalk w = walk(ckpt);
    Checkpoint out = ckpt;
    for (std::size_t li = 0; li < w.layers.size(); ++li) {
        const LayerDesc& d = w.layers[li];
        if (d.kind != LayerKind::conv || is_head_param(d.name)) continue;
        const std::size_t k = std::size_t(d.out_ch);
        const std::size_t n_mask = std::size_t(std::floor(ratio * double(k)));
        if (n_mask == 0) continue;

        Rng rng(derive_seed(seed, "mask:" + d.name));
        auto order = rng.permutation(k);
        order.resize(n_mask);

        Tensor& wt = out.tensors.at(d.name + ".w");
        Tensor& bt = out.tensors.at(d.name + ".b");
        const std::size_t stride = wt.numel() / k;
        const double std = std::sqrt(2.0 / double(d.in_ch * d.ksize * d.ksize));
        for (std::size_t ch : order) {
            for (std::size_t i = 0; i < stride; ++i) wt[ch * stride + i] = rng.normal(0.0, std);
            bt[ch] = 0.0;
        }

        for (std::size_t lj = li + 1; lj < w.layers.size(); ++lj) {
            if (w.layers[lj].kind == LayerKind::conv) break;
            if (w.layers[lj].kind != LayerKind::norm) continue;
            const std::string& nn = w.layers[lj].name;
            for (const auto& pname : norm_param_names(nn, w.kind)) {
                auto it = out.tensors.find(pname);
                if (it == out.tensors.end() || pname == nn + ".c_opt") continue;
                const bool is_gamma = pname.find("gamma") != std::string::npos;
                const bool is_var = pname.find("moving_var") != std::string::npos;
                const bool is_mean = pname.find("moving_mean") != std::string::npos;
                for (std::size_t ch : order) {
                    if (is_mean)
                        it->second[ch] = 0.0;
                    else if (is_var)
                        it->second[ch] = 1.0;
                    else if (is_gamma)
                        it->second[ch] = 1.0 + 0.02 * rng.uniform(-1.0, 1.0);
                    else
                        it->second[ch] = 0.02 * rng.uniform(-1.0, 1.0);
                }
            }
            break;
        }
    }
    return out;
}

bool glob_match(const std::string& pattern, const std::string& text) {
    // Iterative '*' matcher.
    std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

std::vector<std::string> apply_freeze_policy(ModelGraph& model, const FreezePolicy& policy) {
    std::vector<std::string> warnings;
    auto is_buffer = [](const std::string& name) {
        return name.find(".moving_") != std::string::npos ||
               name.find(".src_") != std::string::npos;
    };
    switch (policy.kind) {
        case FreezePolicy::Kind::full_ft:
            for (auto& [name, flag] : model.trainable) flag = !is_buffer(name);
            break;
        case FreezePolicy::Kind::norm_only:
            for (auto& [name, flag] : model.trainable) {
                if (is_buffer(name)) {
                    flag = false;
                    continue;
                }
                const bool norm_param = name.find(".norm.") != std::string::npos;
                flag = norm_param || is_head_param(name);
            }
            break;
        case FreezePolicy::Kind::custom: {
            for (auto& [name, flag] : model.trainable) flag = !is_buffer(name);
            for (const auto& pat : policy.patterns) {
                bool matched = false;
                for (auto& [name, flag] : model.trainable) {
                    if (glob_match(pat, name)) {
                        flag = false;
                        matched = true;
                    }
                }
                if (!matched) warnings.push_back("freeze pattern matched nothing: " + pat);
            }
            break;
        }
    }
    return warnings;
}

} // namespace acnorm
