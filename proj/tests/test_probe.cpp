#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "acnorm/probe.hpp"
#include "acnorm/rng.hpp"
#include "test_util.hpp"

using namespace acnorm;

namespace {

Checkpoint small_ckpt(std::uint64_t seed) {
    ArchSpec arch;
    arch.image_size = 16;
    arch.widths = {4, 8};
    return to_checkpoint(build_model(arch, seed));
}

} // namespace

TEST_CASE("layer_deltas: identical checkpoints give zero everywhere") {
    const Checkpoint c = small_ckpt(3);
    const auto deltas = layer_deltas(c, c);
    for (const auto& d : deltas) {
        CHECK(d.affine_delta == 0.0);
        CHECK(d.stats_delta == 0.0);
        CHECK(d.kernel_delta == 0.0);
    }
}

TEST_CASE("layer_deltas: output covers every norm and conv layer") {
    const Checkpoint c = small_ckpt(5);
    const auto deltas = layer_deltas(c, c);
    int norm_layers = 0, conv_layers = 0;
    for (const auto& d : deltas) (d.is_norm ? norm_layers : conv_layers)++;
    // widths {4,8} segmentation: 2 encoder + 2 decoder norm layers,
    // 2 encoder + 2 decoder convs + head conv.
    CHECK(norm_layers == 4);
    CHECK(conv_layers == 5);
}

TEST_CASE("layer_deltas: beta shift moves exactly one layer's affine delta") {
    const Checkpoint before = small_ckpt(7);
    Checkpoint after = before;
    // gamma = 1 at this channel would give z-delta 1/sqrt(1+eps); use the
    // actual gamma values so the hand-computed expectation is exact.
    Tensor& beta = after.tensors.at("encoder.block1.norm.beta");
    const Tensor& gamma = after.tensors.at("encoder.block1.norm.gamma");
    double expected = 0.0;
    for (std::size_t j = 0; j < beta.numel(); ++j)
        expected += 1.0 / std::sqrt(gamma[j] * gamma[j] + 1e-5);
    expected /= double(beta.numel());
    for (std::size_t j = 0; j < beta.numel(); ++j) beta[j] += 1.0;

    const auto deltas = layer_deltas(before, after);
    for (const auto& d : deltas) {
        if (d.layer == "encoder.block1.norm") {
            CHECK(d.affine_delta == doctest::Approx(expected).epsilon(1e-9));
            // gamma = 1 +- 0.05, so the delta is near 0.99999.
            CHECK(d.affine_delta == doctest::Approx(0.99999).epsilon(5e-3));
        } else {
            CHECK(d.affine_delta == 0.0);
        }
        CHECK(d.stats_delta == 0.0);
        CHECK(d.kernel_delta == 0.0);
    }
}

TEST_CASE("layer_deltas: symmetric in argument order") {
    const Checkpoint a = small_ckpt(11);
    Checkpoint b = a;
    Rng rng(5);
    for (auto& [name, tensor] : b.tensors)
        for (std::size_t i = 0; i < tensor.numel(); ++i) tensor[i] += 0.1 * rng.normal();
    const auto ab = layer_deltas(a, b);
    const auto ba = layer_deltas(b, a);
    REQUIRE(ab.size() == ba.size());
    for (std::size_t i = 0; i < ab.size(); ++i) {
        CHECK(ab[i].affine_delta == doctest::Approx(ba[i].affine_delta).epsilon(1e-12));
        CHECK(ab[i].stats_delta == doctest::Approx(ba[i].stats_delta).epsilon(1e-12));
        CHECK(ab[i].kernel_delta == doctest::Approx(ba[i].kernel_delta).epsilon(1e-12));
    }
}

TEST_CASE("layer_deltas: architecture mismatch is a probe error") {
    const Checkpoint a = small_ckpt(1);
    ArchSpec other;
    other.image_size = 16;
    other.widths = {4, 16};
    const Checkpoint b = to_checkpoint(build_model(other, 1));
    CHECK_THROWS_AS(layer_deltas(a, b), ProbeError);
}

TEST_CASE("verify_stat_propagation: identity pipeline") {
    AffineParams prev;
    prev.gamma = {1.0};
    prev.beta = {0.0};
    const auto chk = verify_stat_propagation(prev, {1.0}, 200000, 7);
    CHECK(chk.mu_pred == 0.0);
    CHECK(chk.var_pred == 1.0);
    // 5-sigma sampling bounds.
    CHECK(std::abs(chk.mu_emp) < 5.0 / std::sqrt(200000.0));
    CHECK(std::abs(chk.var_emp - 1.0) < 5.0 * std::sqrt(2.0 / 200000.0));
}

TEST_CASE("verify_stat_propagation: hand-computed two-channel case") {
    AffineParams prev;
    prev.gamma = {1.0, 1.0};
    prev.beta = {1.0, 2.0};
    const auto chk = verify_stat_propagation(prev, {1.0, 1.0}, 200000, 9);
    CHECK(chk.mu_pred == 3.0);
    CHECK(chk.var_pred == 2.0);
    CHECK(chk.mu_emp == doctest::Approx(3.0).epsilon(0.02));
    CHECK(chk.var_emp == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("verify_stat_propagation: homogeneity of the predicted statistics") {
    Rng rng(13);
    AffineParams prev;
    std::vector<double> w;
    for (int j = 0; j < 4; ++j) {
        prev.gamma.push_back(rng.uniform(0.5, 1.5));
        prev.beta.push_back(rng.uniform(-1.0, 1.0));
        w.push_back(rng.uniform(-1.0, 1.0));
    }
    const auto base = verify_stat_propagation(prev, w, 1000, 3);
    const double c = 2.5;
    std::vector<double> scaled = w;
    for (auto& v : scaled) v *= c;
    const auto big = verify_stat_propagation(prev, scaled, 1000, 3);
    CHECK(big.mu_pred == doctest::Approx(c * base.mu_pred).epsilon(1e-12));
    CHECK(big.var_pred == doctest::Approx(c * c * base.var_pred).epsilon(1e-12));
}

TEST_CASE("verify_stat_propagation: input validation") {
    AffineParams prev;
    prev.gamma = {1.0, 1.0};
    prev.beta = {0.0, 0.0};
    CHECK_THROWS_AS(verify_stat_propagation(prev, {1.0}, 1000, 0), InputError);
    CHECK_THROWS_AS(verify_stat_propagation(prev, {1.0, 1.0}, 1, 0), InputError);
}
