#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "acnorm/experiment.hpp"
#include "test_util.hpp"

using namespace acnorm;
namespace fs = std::filesystem;

namespace {

ExperimentConfig mini_config() {
    ExperimentConfig cfg;
    cfg.name = "mini";
    cfg.seeds = {1, 2};
    cfg.model.image_size = 16;
    cfg.model.widths = {4, 8};

    cfg.target_task.image_size = 16;
    cfg.target_task.n_train = 8;
    cfg.target_task.n_val = 2;
    cfg.target_task.n_test = 4;
    cfg.target_task.intensity_shift = 0.1;

    SourceSpec src;
    src.name = "source";
    src.task = cfg.target_task;
    src.task.intensity_shift = 0.0;
    cfg.sources = {src};

    cfg.pretrain_cfg.epochs = 1;
    cfg.pretrain_cfg.batch_size = 4;
    cfg.finetune_cfg.epochs = 1;
    cfg.finetune_cfg.batch_size = 4;

    cfg.arms = {{"vanilla", NormKind::vanilla_bn, {}, {}}, {"acnorm", NormKind::acnorm, {}, {}}};
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), {});
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

} // namespace

TEST_CASE("run_experiment: two arms yield exactly two rows per seed") {
    const auto dir = testutil::temp_dir("exp_rows");
    const ExperimentReport rep = run_experiment(mini_config(), (dir / "out").string());
    CHECK(rep.n_errors == 0);
    CHECK(rep.rows.size() == 4); // 2 seeds x 1 source x 1 variant x 2 arms

    const std::string csv = slurp(dir / "out" / "results.csv");
    CHECK(count_lines(csv) == 5); // header + 4 rows
    CHECK(csv.find("seed,source,ckpt_variant,arm,dice,accuracy,auc,final_loss,ac_corr") == 0);
    fs::remove_all(dir);
}

TEST_CASE("run_experiment: shuffle and mask variants complete and report all arms") {
    ExperimentConfig cfg = mini_config();
    cfg.seeds = {3};
    cfg.ckpt_variants = {{"original", false, 0, false, 0.0, 0},
                         {"shuffled", true, 11, false, 0.0, 0},
                         {"masked", false, 0, true, 0.5, 7}};
    const auto dir = testutil::temp_dir("exp_variants");
    const ExperimentReport rep = run_experiment(cfg, (dir / "out").string());
    CHECK(rep.n_errors == 0);
    CHECK(rep.rows.size() == 6); // 3 variants x 2 arms
    std::set<std::string> variants;
    for (const auto& r : rep.rows) {
        variants.insert(r.variant);
        CHECK_FALSE(r.failed);
        CHECK(r.metrics.dice.has_value());
    }
    CHECK(variants == std::set<std::string>{"original", "shuffled", "masked"});
    fs::remove_all(dir);
}

TEST_CASE("run_experiment: heatmap artifact per AC-Norm layer per probe epoch") {
    ExperimentConfig cfg = mini_config();
    cfg.seeds = {5};
    cfg.arms = {{"acnorm", NormKind::acnorm, {}, {}}};
    cfg.finetune_cfg.epochs = 2;
    cfg.probe_heatmaps = true;
    cfg.probe_deltas = true;
    const auto dir = testutil::temp_dir("exp_heatmaps");
    const ExperimentReport rep = run_experiment(cfg, (dir / "out").string());
    CHECK(rep.n_errors == 0);

    const fs::path run_dir = dir / "out" / "runs" / "seed5" / "source" / "original" / "acnorm";
    // 4 norm layers x epochs {0,1,2}.
    int heatmaps = 0;
    for (const auto& e : fs::directory_iterator(run_dir))
        if (e.path().filename().string().rfind("heatmap_", 0) == 0) ++heatmaps;
    CHECK(heatmaps == 12);
    CHECK(fs::exists(run_dir / "deltas.csv"));
    CHECK(fs::exists(run_dir / "deltas.svg"));
    CHECK(fs::exists(run_dir / "metrics.json"));
    CHECK(fs::exists(run_dir / "loss.csv"));
    CHECK(fs::exists(run_dir / "ckpt_final.acn"));
    fs::remove_all(dir);
}

TEST_CASE("run_experiment: estimate stage emits ranking report and scatter") {
    ExperimentConfig cfg = mini_config();
    cfg.seeds = {7};
    SourceSpec random_src;
    random_src.name = "random";
    random_src.random_init = true;
    random_src.task = cfg.target_task;
    cfg.sources.push_back(random_src);
    cfg.arms = {{"acnorm", NormKind::acnorm, {}, {}}};
    cfg.estimate_enabled = true;
    cfg.estimate_arm = "acnorm";
    const auto dir = testutil::temp_dir("exp_estimate");
    const ExperimentReport rep = run_experiment(cfg, (dir / "out").string());
    CHECK(rep.n_errors == 0);
    REQUIRE(rep.rankings.size() == 1);
    CHECK(rep.rankings[0].scores.size() == 2);
    CHECK(fs::exists(dir / "out" / "report.json"));
    CHECK(fs::exists(dir / "out" / "plots" / "scatter_seed7.svg"));
    fs::remove_all(dir);
}

TEST_CASE("run_experiment: reproducible bit-for-bit from the same config") {
    const auto dir = testutil::temp_dir("exp_repro");
    ExperimentConfig cfg = mini_config();
    cfg.seeds = {9};
    run_experiment(cfg, (dir / "a").string());
    run_experiment(cfg, (dir / "b").string());
    CHECK(slurp(dir / "a" / "results.csv") == slurp(dir / "b" / "results.csv"));
    CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
    fs::remove_all(dir);
}

TEST_CASE("run_experiment: partial failure keeps other arms and records errors") {
    ExperimentConfig cfg = mini_config();
    cfg.seeds = {11};
    // The second arm requests an impossible configuration through the
    // variant: mask ratio outside [0,1] fails at the variant stage, taking
    // the entire variant down but not the original.
    cfg.ckpt_variants = {{"original", false, 0, false, 0.0, 0},
                         {"broken", false, 0, true, 2.0, 0}};
    const auto dir = testutil::temp_dir("exp_partial");
    const ExperimentReport rep = run_experiment(cfg, (dir / "out").string());
    CHECK(rep.n_errors == 1);
    CHECK(rep.rows.size() == 2); // original x 2 arms still ran
    CHECK(fs::exists(dir / "out" / "errors.json"));
    fs::remove_all(dir);
}

TEST_CASE("experiment config: JSON round trip and validation") {
    const ExperimentConfig cfg = mini_config();
    const nlohmann::json j = to_json(cfg);
    const ExperimentConfig back = experiment_from_json(j);
    CHECK(back.name == cfg.name);
    CHECK(back.seeds == cfg.seeds);
    CHECK(back.arms.size() == 2);
    CHECK(back.arms[1].norm == NormKind::acnorm);
    CHECK(to_json(back) == j);

    nlohmann::json bad = j;
    bad["bogus_key"] = 1;
    CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
    nlohmann::json wrong_version = j;
    wrong_version["config_version"] = 99;
    CHECK_THROWS_AS(experiment_from_json(wrong_version), ConfigError);
}

TEST_CASE("layer_used_calibration covers every variant kind") {
    ArchSpec arch;
    arch.image_size = 16;
    arch.widths = {4};
    for (NormKind kind : {NormKind::acnorm, NormKind::sc_norm, NormKind::ac_diag,
                          NormKind::ac_non_sparse, NormKind::ac_trainable_c}) {
        ModelGraph m = build_model(arch, 3, kind);
        const Tensor c = layer_used_calibration(m, "encoder.block0.norm");
        CHECK(c.shape() == std::vector<std::size_t>{4, 4});
        double sum = 0.0;
        for (std::size_t i = 0; i < c.numel(); ++i) sum += c[i];
        CHECK(sum > 0.0);
    }
    ModelGraph vanilla = build_model(arch, 3, NormKind::vanilla_bn);
    CHECK_THROWS_AS(layer_used_calibration(vanilla, "encoder.block0.norm"), ConfigError);
}
