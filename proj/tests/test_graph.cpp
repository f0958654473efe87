#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "acnorm/data.hpp"
#include "acnorm/graph.hpp"
#include "acnorm/rng.hpp"
#include "acnorm/train.hpp"
#include "test_util.hpp"

using namespace acnorm;

TEST_CASE("layout: widths echo into encoder norm layers") {
    ArchSpec arch;
    arch.task = "segmentation";
    arch.image_size = 16;
    arch.widths = {8, 16};
    const auto layers = layout_from_arch(arch);

    std::vector<int> encoder_norm_channels;
    for (const auto& d : layers)
        if (d.kind == LayerKind::norm && d.name.rfind("encoder.", 0) == 0)
            encoder_norm_channels.push_back(d.channels);
    CHECK(encoder_norm_channels == std::vector<int>{8, 16});
}

TEST_CASE("build_model: deterministic given spec and seed") {
    ArchSpec arch;
    arch.image_size = 16;
    arch.widths = {4, 8};
    const ModelGraph a = build_model(arch, 42);
    const ModelGraph b = build_model(arch, 42);
    CHECK(a.params == b.params);
    const ModelGraph c = build_model(arch, 43);
    CHECK(a.params != c.params);
}

TEST_CASE("build_model: classification head replaces decoder with pooling + dense") {
    ArchSpec arch;
    arch.task = "classification";
    arch.image_size = 16;
    arch.widths = {4, 8};
    arch.n_classes = 3;
    const ModelGraph m = build_model(arch, 1);
    bool has_gap = false, has_fc = false, has_decoder = false;
    for (const auto& d : m.layers) {
        if (d.kind == LayerKind::global_pool) has_gap = true;
        if (d.kind == LayerKind::dense) has_fc = true;
        if (d.name.rfind("decoder.", 0) == 0) has_decoder = true;
    }
    CHECK(has_gap);
    CHECK(has_fc);
    CHECK_FALSE(has_decoder);
    CHECK(m.param("head.fc.w").shape() == std::vector<std::size_t>{3, 8});
}

TEST_CASE("build_model: inconsistent spec rejected") {
    ArchSpec arch;
    arch.image_size = 10; // second pool would see an odd size (10 -> 5)
    arch.widths = {4, 8};
    CHECK_THROWS_AS(build_model(arch, 0), SpecError);
    ArchSpec bad;
    bad.task = "regression";
    CHECK_THROWS_AS(build_model(bad, 0), SpecError);
}

TEST_CASE("model shapes: segmentation output matches input geometry") {
    ArchSpec arch;
    arch.image_size = 16;
    arch.widths = {4, 8};
    ModelGraph m = build_model(arch, 3);
    Tensor x({2, 1, 16, 16});
    Rng rng(5);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    const Tensor y = model_forward(m, x, Mode::inference);
    CHECK(y.shape() == std::vector<std::size_t>{2, 1, 16, 16});
}

TEST_CASE("model shapes: classification logits") {
    ArchSpec arch;
    arch.task = "classification";
    arch.image_size = 16;
    arch.widths = {4, 8};
    arch.n_classes = 3;
    ModelGraph m = build_model(arch, 3);
    Tensor x({2, 1, 16, 16});
    Rng rng(5);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    const Tensor y = model_forward(m, x, Mode::inference);
    CHECK(y.shape() == std::vector<std::size_t>{2, 3});
}

TEST_CASE("deepest_encoder_norm resolves the bottleneck norm") {
    ArchSpec arch;
    arch.image_size = 16;
    arch.widths = {4, 8};
    const ModelGraph m = build_model(arch, 1);
    CHECK(deepest_encoder_norm(m) == "encoder.block1.norm");
}

TEST_CASE("reinit_head changes only head parameters") {
    ArchSpec arch;
    arch.image_size = 16;
    arch.widths = {4};
    ModelGraph m = build_model(arch, 9);
    const auto before = m.params;
    reinit_head(m, 1234);
    CHECK(m.param("head.conv.w") != before.at("head.conv.w"));
    for (const auto& [name, tensor] : m.params)
        if (!is_head_param(name)) CHECK(tensor == before.at(name));
}

namespace {

// End-to-end loss for finite differences, on copies so moving statistics do
// not leak between evaluations.
double net_loss(const ModelGraph& model, const Batch& batch, const std::string& task) {
    ModelGraph m = model;
    const Tensor logits = model_forward(m, batch.images, Mode::training);
    Tensor dl;
    return loss_and_logit_grad(logits, batch, task, dl);
}

void check_network_gradients(const std::string& task, std::uint64_t seed) {
    ArchSpec arch;
    arch.task = task;
    arch.image_size = 8;
    arch.widths = {3};
    arch.n_classes = task == "classification" ? 2 : 1;
    ModelGraph model = build_model(arch, seed, NormKind::acnorm);

    SyntheticTaskSpec spec;
    spec.task = task;
    spec.image_size = 8;
    spec.n_train = 4;
    spec.n_classes = 2;
    spec.seed = seed;
    const Dataset ds = generate_split(spec, Split::train);
    const Batch batch = make_batch(ds, {0, 1, 2, 3});

    ModelGraph fwd = model;
    std::vector<LayerCache> caches;
    const Tensor logits = model_forward(fwd, batch.images, Mode::training, &caches);
    Tensor dlogits;
    loss_and_logit_grad(logits, batch, task, dlogits);
    const ParamGrads grads = model_backward(fwd, caches, dlogits);

    // Spot-check a sample of coordinates in every trainable parameter.
    Rng pick(seed + 99);
    const double h = 1e-5;
    for (const auto& [name, grad] : grads) {
        const std::size_t n = grad.numel();
        for (int rep = 0; rep < 3; ++rep) {
            const std::size_t i = pick.uniform_below(n);
            ModelGraph mp = model, mm = model;
            mp.param(name)[i] += h;
            mm.param(name)[i] -= h;
            const double fd = (net_loss(mp, batch, task) - net_loss(mm, batch, task)) / (2 * h);
            CHECK(testutil::rel_err(grad[i], fd) < 2e-4);
        }
    }
}

} // namespace

TEST_CASE("network gradients match finite differences (segmentation, acnorm)") {
    check_network_gradients("segmentation", 11);
}

TEST_CASE("network gradients match finite differences (classification, acnorm)") {
    check_network_gradients("classification", 12);
}

TEST_CASE("norm layer inside the network updates moving stats in training only") {
    ArchSpec arch;
    arch.image_size = 8;
    arch.widths = {4};
    ModelGraph m = build_model(arch, 2);
    Tensor x({2, 1, 8, 8});
    Rng rng(3);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();

    const Tensor mean_before = m.param("encoder.block0.norm.moving_mean");
    model_forward(m, x, Mode::inference);
    CHECK(m.param("encoder.block0.norm.moving_mean") == mean_before);
    model_forward(m, x, Mode::training);
    CHECK(m.param("encoder.block0.norm.moving_mean") != mean_before);
}
