#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "acnorm/graph.hpp"

namespace acnorm {

// Single-file archive: a text manifest (key=value lines) plus named tensors
// with float64 payloads. Layout documented in docs/checkpoint.md.
struct Checkpoint {
    std::map<std::string, std::string> manifest;
    std::map<std::string, Tensor> tensors;

    std::string manifest_at(const std::string& key) const;
    bool operator==(const Checkpoint& other) const = default;
};

inline constexpr int kCheckpointFormatVersion = 1;

std::uint64_t arch_hash(const std::string& canonical);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Collects every parameter of the model; manifest records the architecture,
// seed and norm kind.
Checkpoint to_checkpoint(const ModelGraph& model, const std::string& tag = "");

// Rebuilds a model with the checkpoint's architecture/norm kind and loads
// every stored tensor into it.
ModelGraph model_from_checkpoint(const Checkpoint& ckpt);

ArchSpec arch_from_checkpoint(const Checkpoint& ckpt);

} // namespace acnorm
