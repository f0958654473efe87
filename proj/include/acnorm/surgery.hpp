#pragma once

#include <map>
#include <string>
#include <vector>

#include "acnorm/checkpoint.hpp"

namespace acnorm {

// Replaces every norm layer of the model with the requested kind, loading
// conv weights and norm parameters from the checkpoint. Source affines and
// source moving statistics are taken from the checkpoint and frozen; target
// affines start as a copy of the source affines. Head parameters are loaded
// when the checkpoint has matching shapes and kept otherwise (fine-tuning
// re-randomizes the head separately).
ModelGraph swap_norm_layers(const ModelGraph& model, const Checkpoint& source_ckpt,
                            NormKind kind);

// One permutation of output channels per non-head conv layer.
using LayerPerms = std::map<std::string, std::vector<std::size_t>>;

LayerPerms random_layer_perms(const Checkpoint& ckpt, std::uint64_t seed);

// Alignment-breaking shuffle: permutes each conv's output-channel axis and
// the matching norm parameters, deliberately leaving the next layer's
// input-channel axis alone. The head layer is not a shuffle target (it is
// not transferred).
Checkpoint shuffle_channels(const Checkpoint& ckpt, std::uint64_t seed);
Checkpoint shuffle_channels_with_perms(const Checkpoint& ckpt, const LayerPerms& perms);

// Alignment-preserving permutation: additionally gathers the next consumer's
// input-channel axis, which makes the permutation a functional no-op. Used
// as the oracle that the breaking shuffle genuinely misaligns channels.
Checkpoint permute_channels_consistent(const Checkpoint& ckpt, std::uint64_t seed);
Checkpoint permute_channels_consistent_with_perms(const Checkpoint& ckpt, const LayerPerms& perms);

// Replaces floor(ratio * K) randomly chosen output channels per non-head
// conv layer (weights, bias and the matching norm parameters) with fresh
// values from the builder's init scheme.
Checkpoint mask_channels(const Checkpoint& ckpt, double ratio, std::uint64_t seed);

struct FreezePolicy {
    enum class Kind { full_ft, norm_only, custom };
    Kind kind = Kind::full_ft;
    std::vector<std::string> patterns; // custom: freeze names matching any glob

    static FreezePolicy full_ft() { return {}; }
    static FreezePolicy norm_only() { return {Kind::norm_only, {}}; }
    static FreezePolicy custom(std::vector<std::string> pats) {
        return {Kind::custom, std::move(pats)};
    }
};

// Sets trainable flags. Returns warnings (patterns that matched nothing).
std::vector<std::string> apply_freeze_policy(ModelGraph& model, const FreezePolicy& policy);

// Simple glob with '*' wildcards, used by custom freeze patterns.
bool glob_match(const std::string& pattern, const std::string& text);

} // namespace acnorm
