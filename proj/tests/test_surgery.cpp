#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "acnorm/checkpoint.hpp"
#include "acnorm/data.hpp"
#include "acnorm/rng.hpp"
#include "acnorm/surgery.hpp"
#include "acnorm/train.hpp"
#include "test_util.hpp"

using namespace acnorm;

namespace {

ArchSpec small_arch() {
    ArchSpec arch;
    arch.task = "segmentation";
    arch.image_size = 16;
    arch.widths = {4, 8};
    return arch;
}

// A briefly trained source model so affines and stats are informative.
Checkpoint trained_source(std::uint64_t seed) {
    SyntheticTaskSpec task;
    task.image_size = 16;
    task.n_train = 12;
    task.n_val = 2;
    task.n_test = 4;
    task.seed = seed;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = seed;
    return pretrain(task, small_arch(), cfg);
}

Tensor random_input(std::uint64_t seed, std::size_t b = 2, std::size_t s = 16) {
    Rng rng(seed);
    Tensor x({b, 1, s, s});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal(0.3, 0.4);
    return x;
}

} // namespace

TEST_CASE("checkpoint round-trip is bitwise") {
    const Checkpoint ckpt = trained_source(5);
    const auto dir = testutil::temp_dir("ckpt_roundtrip");
    const std::string path = (dir / "model.acn").string();
    save_checkpoint(ckpt, path);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded == ckpt);
    std::filesystem::remove_all(dir);
}

TEST_CASE("swap with vanilla_bn is identity surgery in inference mode") {
    const Checkpoint ckpt = trained_source(7);
    ModelGraph source_model = model_from_checkpoint(ckpt);
    ModelGraph target = build_model(small_arch(), 999); // different init entirely
    ModelGraph swapped = swap_norm_layers(target, ckpt, NormKind::vanilla_bn);

    const Tensor x = random_input(3);
    const Tensor y_src = model_forward(source_model, x, Mode::inference);
    const Tensor y_swp = model_forward(swapped, x, Mode::inference);
    CHECK(y_src.max_abs_diff(y_swp) < 1e-6);
}

TEST_CASE("swap with acnorm at init matches the per-layer closed form") {
    const Checkpoint ckpt = trained_source(11);
    ModelGraph base = build_model(small_arch(), 999);
    ModelGraph acn = swap_norm_layers(base, ckpt, NormKind::acnorm);

    const Tensor x = random_input(4);
    ActivationCapture pre, post;
    model_forward(acn, x, Mode::inference, nullptr, &pre, &post);

    for (const auto& d : acn.layers) {
        if (d.kind != LayerKind::norm) continue;
        // BN on the same pre-norm input with the same affines/stats.
        AffineParams aff;
        aff.gamma = acn.param(d.name + ".gamma").vec();
        aff.beta = acn.param(d.name + ".beta").vec();
        const auto z = domain_signature(aff, acn.norm_config.eps);
        // Signatures from a trained checkpoint must be pairwise distinct.
        for (std::size_t a = 0; a < z.size(); ++a)
            for (std::size_t b = a + 1; b < z.size(); ++b) CHECK(z[a] != z[b]);
        const auto c = sparsify(calibration_matrix(z, z, acn.norm_config.temperature));

        ACNormLayerState bn_state = ACNormLayerState::from_source(aff);
        bn_state.stats.moving_mean = acn.param(d.name + ".moving_mean").vec();
        bn_state.stats.moving_var = acn.param(d.name + ".moving_var").vec();
        bn_state.mode = Mode::inference;

        const Tensor& x_pre = pre.at(d.name);
        const std::size_t B = x_pre.dim(0), C = x_pre.dim(1), H = x_pre.dim(2), W = x_pre.dim(3);
        Tensor rows({B * H * W, C});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t ch = 0; ch < C; ++ch)
                for (std::size_t i = 0; i < H * W; ++i)
                    rows(b * H * W + i, ch) = x_pre[((b * C + ch) * H * W) + i];
        const Tensor ybn = bn_forward(rows, bn_state);

        const Tensor& y_acn = post.at(d.name);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t ch = 0; ch < C; ++ch)
                for (std::size_t i = 0; i < H * W; ++i) {
                    const double expected = (1.0 + c.values(ch, ch)) * ybn(b * H * W + i, ch);
                    const double got = y_acn[((b * C + ch) * H * W) + i];
                    CHECK(std::abs(got - expected) < 1e-9);
                }
    }
}

TEST_CASE("swapping twice is idempotent") {
    const Checkpoint ckpt = trained_source(13);
    ModelGraph base = build_model(small_arch(), 42);
    ModelGraph once = swap_norm_layers(base, ckpt, NormKind::acnorm);
    ModelGraph twice = swap_norm_layers(once, ckpt, NormKind::acnorm);
    CHECK(once.params == twice.params);
    for (std::size_t i = 0; i < once.layers.size(); ++i)
        CHECK(once.layers[i].norm_kind == twice.layers[i].norm_kind);
}

TEST_CASE("swap rejects checkpoints with mismatched shapes, listing layers") {
    const Checkpoint ckpt = trained_source(17);
    ArchSpec other = small_arch();
    other.widths = {4, 16};
    ModelGraph target = build_model(other, 1);
    CHECK_THROWS_AS(swap_norm_layers(target, ckpt, NormKind::acnorm), SurgeryError);

    Checkpoint truncated = ckpt;
    truncated.tensors.erase("encoder.block1.conv.w");
    ModelGraph target2 = build_model(small_arch(), 1);
    try {
        swap_norm_layers(target2, truncated, NormKind::acnorm);
        CHECK(false);
    } catch (const SurgeryError& e) {
        CHECK(std::string(e.what()).find("encoder.block1.conv.w") != std::string::npos);
    }
}

TEST_CASE("shuffle: identity permutations leave the checkpoint unchanged") {
    const Checkpoint ckpt = trained_source(19);
    LayerPerms identity;
    for (const auto& d : layout_from_arch(arch_from_checkpoint(ckpt))) {
        if (d.kind != LayerKind::conv || is_head_param(d.name)) continue;
        std::vector<std::size_t> p(std::size_t(d.out_ch));
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = i;
        identity[d.name] = p;
    }
    const Checkpoint out = shuffle_channels_with_perms(ckpt, identity);
    CHECK(out == ckpt);
}

TEST_CASE("shuffle: K=1 conv layers are unchanged by any permutation") {
    ArchSpec arch;
    arch.image_size = 8;
    arch.widths = {1};
    ModelGraph m = build_model(arch, 3);
    const Checkpoint ckpt = to_checkpoint(m);
    const Checkpoint out = shuffle_channels(ckpt, 77);
    CHECK(out.tensors == ckpt.tensors);
}

TEST_CASE("shuffle: permuted checkpoint changes model outputs") {
    const Checkpoint ckpt = trained_source(23);
    const Checkpoint shuffled = shuffle_channels(ckpt, 5);
    ModelGraph a = model_from_checkpoint(ckpt);
    ModelGraph b = model_from_checkpoint(shuffled);
    const Tensor x = random_input(9);
    const Tensor ya = model_forward(a, x, Mode::inference);
    const Tensor yb = model_forward(b, x, Mode::inference);
    CHECK(ya.max_abs_diff(yb) > 1e-2);
}

TEST_CASE("consistency-preserving permutation is a functional no-op") {
    const Checkpoint ckpt = trained_source(29);
    const Checkpoint permuted = permute_channels_consistent(ckpt, 5);
    CHECK(permuted.tensors != ckpt.tensors); // genuinely permuted...
    ModelGraph a = model_from_checkpoint(ckpt);
    ModelGraph b = model_from_checkpoint(permuted);
    const Tensor x = random_input(9);
    const Tensor ya = model_forward(a, x, Mode::inference);
    const Tensor yb = model_forward(b, x, Mode::inference);
    CHECK(ya.max_abs_diff(yb) < 1e-5); // ...but equivalent
}

TEST_CASE("consistency-preserving permutation is a no-op for classification too") {
    ArchSpec arch;
    arch.task = "classification";
    arch.image_size = 16;
    arch.widths = {4, 8};
    arch.n_classes = 3;
    ModelGraph m = build_model(arch, 31);
    const Checkpoint ckpt = to_checkpoint(m);
    const Checkpoint permuted = permute_channels_consistent(ckpt, 6);
    ModelGraph b = model_from_checkpoint(permuted);
    const Tensor x = random_input(10);
    const Tensor ya = model_forward(m, x, Mode::inference);
    const Tensor yb = model_forward(b, x, Mode::inference);
    CHECK(ya.max_abs_diff(yb) < 1e-8);
}

TEST_CASE("mask: ratio 0 unchanged, ratio 1 re-initializes every channel") {
    const Checkpoint ckpt = trained_source(37);
    CHECK(mask_channels(ckpt, 0.0, 9).tensors == ckpt.tensors);

    const Checkpoint full = mask_channels(ckpt, 1.0, 9);
    for (const auto& d : layout_from_arch(arch_from_checkpoint(ckpt))) {
        if (d.kind != LayerKind::conv || is_head_param(d.name)) continue;
        const Tensor& before = ckpt.tensors.at(d.name + ".w");
        const Tensor& after = full.tensors.at(d.name + ".w");
        const std::size_t stride = before.numel() / std::size_t(d.out_ch);
        for (int ch = 0; ch < d.out_ch; ++ch) {
            bool differs = false;
            for (std::size_t i = 0; i < stride; ++i)
                differs = differs || (before[std::size_t(ch) * stride + i] !=
                                      after[std::size_t(ch) * stride + i]);
            CHECK(differs);
        }
    }
    CHECK_THROWS_AS(mask_channels(ckpt, 1.5, 0), InputError);
}

TEST_CASE("mask: ratio 0.5 on K=8 re-initializes exactly 4 channels per layer") {
    ArchSpec arch;
    arch.image_size = 8;
    arch.widths = {8};
    ModelGraph m = build_model(arch, 41);
    const Checkpoint ckpt = to_checkpoint(m);
    const Checkpoint masked = mask_channels(ckpt, 0.5, 3);
    const Tensor& before = ckpt.tensors.at("encoder.block0.conv.w");
    const Tensor& after = masked.tensors.at("encoder.block0.conv.w");
    const std::size_t stride = before.numel() / 8;
    int changed = 0;
    for (std::size_t ch = 0; ch < 8; ++ch) {
        bool differs = false;
        for (std::size_t i = 0; i < stride; ++i)
            differs = differs || (before[ch * stride + i] != after[ch * stride + i]);
        if (differs) ++changed;
    }
    CHECK(changed == 4);
}

TEST_CASE("freeze: full_ft leaves all non-source parameters trainable") {
    const Checkpoint ckpt = trained_source(43);
    ModelGraph base = build_model(small_arch(), 2);
    ModelGraph m = swap_norm_layers(base, ckpt, NormKind::acnorm);
    apply_freeze_policy(m, FreezePolicy::full_ft());
    for (const auto& [name, flag] : m.trainable) {
        const bool buffer = name.find(".moving_") != std::string::npos ||
                            name.find(".src_") != std::string::npos;
        CHECK(flag == !buffer);
    }
}

TEST_CASE("freeze: norm_only keeps conv weights bitwise unchanged through training") {
    const Checkpoint ckpt = trained_source(47);
    SyntheticTaskSpec target;
    target.image_size = 16;
    target.n_train = 8;
    target.n_val = 2;
    target.n_test = 2;
    target.intensity_shift = 0.15;
    target.seed = 99;

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.norm_kind = NormKind::acnorm;
    cfg.freeze = FreezePolicy::norm_only();
    cfg.seed = 1;

    FinetuneResult res = finetune(ckpt, target, cfg);
    for (const auto& [name, tensor] : res.final_ckpt.tensors) {
        if (name.find(".conv.") == std::string::npos || is_head_param(name)) continue;
        CHECK(tensor == res.initial_ckpt.tensors.at(name));
    }
    // The norm affines did train.
    CHECK(res.final_ckpt.tensors.at("encoder.block0.norm.gamma") !=
          res.initial_ckpt.tensors.at("encoder.block0.norm.gamma"));
}

TEST_CASE("freeze: custom pattern freezes exactly the matching parameters") {
    ModelGraph m = build_model(small_arch(), 3);
    const auto warnings = apply_freeze_policy(m, FreezePolicy::custom({"encoder.*"}));
    CHECK(warnings.empty());
    for (const auto& [name, flag] : m.trainable) {
        const bool buffer = name.find(".moving_") != std::string::npos;
        if (name.rfind("encoder.", 0) == 0)
            CHECK_FALSE(flag);
        else
            CHECK(flag == !buffer);
    }
    const auto w2 = apply_freeze_policy(m, FreezePolicy::custom({"bogus.*"}));
    REQUIRE(w2.size() == 1);
    CHECK(w2[0].find("bogus") != std::string::npos);
}

TEST_CASE("glob_match semantics") {
    CHECK(glob_match("encoder.*", "encoder.block0.conv.w"));
    CHECK_FALSE(glob_match("encoder.*", "decoder.block0.conv.w"));
    CHECK(glob_match("*.norm.gamma", "decoder.block1.norm.gamma"));
    CHECK(glob_match("head.conv.w", "head.conv.w"));
    CHECK_FALSE(glob_match("head.conv.w", "head.conv.b"));
}
