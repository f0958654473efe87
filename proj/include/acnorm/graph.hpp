#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acnorm/variants.hpp"

namespace acnorm {

// Structural description of a model. Norm kind is configuration, not
// structure; it is tracked alongside so parameter names stay stable.
struct ArchSpec {
    std::string task = "segmentation"; // or "classification"
    int image_size = 64;
    int in_channels = 1;
    std::vector<int> widths = {8, 16, 32};
    int n_classes = 1; // segmentation: output channels; classification: classes
    int kernel = 3;

    std::string canonical() const;
    static ArchSpec from_canonical(const std::string& s);
    void validate() const;
};

enum class LayerKind { conv, norm, activation, pool, upsample, global_pool, dense };

enum class ActKind { relu, identity };

struct LayerDesc {
    LayerKind kind;
    std::string name; // e.g. "encoder.block0.conv"
    // conv
    int in_ch = 0, out_ch = 0, ksize = 0;
    // norm
    int channels = 0;
    NormKind norm_kind = NormKind::vanilla_bn;
    // activation
    ActKind act = ActKind::relu;
    // dense
    int in_dim = 0, out_dim = 0;
};

// Layer layout implied by an architecture; shared by the builder, the
// checkpoint walker and the surgery code.
std::vector<LayerDesc> layout_from_arch(const ArchSpec& arch);

struct ModelGraph {
    ArchSpec arch;
    NormKind norm_kind = NormKind::vanilla_bn;
    std::uint64_t init_seed = 0;
    std::vector<LayerDesc> layers;
    int encoder_boundary = 0; // index of the last encoder layer
    std::map<std::string, Tensor> params;
    std::map<std::string, bool> trainable;
    ACNormConfig norm_config;

    bool has_param(const std::string& name) const { return params.count(name) != 0; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
};

// Deterministic build: given the same spec and seed the initial parameters
// are bitwise identical. Norm layers start as vanilla BN unless stated.
ModelGraph build_model(const ArchSpec& arch, std::uint64_t seed,
                       NormKind norm_kind = NormKind::vanilla_bn,
                       ACNormConfig norm_config = {});

// Re-randomizes the task head only.
void reinit_head(ModelGraph& model, std::uint64_t seed);

// True for head parameters ("head." prefix).
bool is_head_param(const std::string& name);

// Names of the parameters a norm layer owns for a given kind.
std::vector<std::string> norm_param_names(const std::string& layer_name, NormKind kind);

// Resolves "the last norm layer at or before the encoder boundary".
std::string deepest_encoder_norm(const ModelGraph& model);

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct LayerCache {
    Tensor input;        // conv/dense/pool/act input as needed
    Tensor pool_argmax;  // flat input index per pooled output element
    NormCache norm;
};

// Optional per-layer output capture, keyed by layer name.
using ActivationCapture = std::map<std::string, Tensor>;

// Runs the model on x (B x C x H x W for image input). Training mode updates
// norm moving statistics in place. caches enables model_backward;
// capture_pre/capture_out record per-layer inputs/outputs by layer name.
Tensor model_forward(ModelGraph& model, const Tensor& x, Mode mode,
                     std::vector<LayerCache>* caches = nullptr,
                     ActivationCapture* capture_pre = nullptr,
                     ActivationCapture* capture_out = nullptr);

using ParamGrads = std::map<std::string, Tensor>;

// Backpropagates upstream (gradient of the loss w.r.t. the model output)
// through the cached forward pass. Returns gradients for every parameter
// (frozen parameters included; the optimizer applies trainability).
ParamGrads model_backward(ModelGraph& model, const std::vector<LayerCache>& caches,
                          const Tensor& upstream);

} // namespace acnorm
