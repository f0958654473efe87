#include "acnorm/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "acnorm/plots.hpp"
#include "acnorm/probe.hpp"
#include "acnorm/rng.hpp"

namespace acnorm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt6(*v) : ""; }

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& ctx) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed) ok = ok || (k == it.key());
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + ctx);
    }
}

} // namespace

ExperimentConfig experiment_from_json(const json& j) {
    check_keys(j,
               {"config_version", "name", "seeds", "model", "target_task", "sources", "pretrain",
                "finetune", "ckpt_variants", "arms", "estimate", "probes"},
               "experiment config");
    if (j.value("config_version", kConfigVersion) != kConfigVersion)
        throw ConfigError("unsupported config_version");

    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("experiment needs at least one seed");
    cfg.model = arch_from_json(j.at("model"));
    cfg.target_task = task_from_json(j.at("target_task"));

    if (!j.contains("sources")) throw ConfigError("experiment needs sources");
    for (const auto& js : j.at("sources")) {
        check_keys(js, {"name", "random_init", "task"}, "source");
        SourceSpec s;
        s.name = js.at("name").get<std::string>();
        s.random_init = js.value("random_init", false);
        s.task = js.contains("task") ? task_from_json(js.at("task")) : cfg.target_task;
        cfg.sources.push_back(std::move(s));
    }
    if (j.contains("pretrain")) cfg.pretrain_cfg = train_from_json(j.at("pretrain"));
    if (j.contains("finetune")) cfg.finetune_cfg = train_from_json(j.at("finetune"));

    if (j.contains("ckpt_variants")) {
        cfg.ckpt_variants.clear();
        for (const auto& jv : j.at("ckpt_variants")) {
            check_keys(jv, {"name", "shuffle_seed", "mask_ratio", "mask_seed"}, "ckpt variant");
            CkptVariantSpec v;
            v.name = jv.at("name").get<std::string>();
            if (jv.contains("shuffle_seed")) {
                v.shuffle = true;
                v.shuffle_seed = jv.at("shuffle_seed").get<std::uint64_t>();
            }
            if (jv.contains("mask_ratio")) {
                v.mask = true;
                v.mask_ratio = jv.at("mask_ratio").get<double>();
                v.mask_seed = jv.value("mask_seed", std::uint64_t(0));
            }
            cfg.ckpt_variants.push_back(std::move(v));
        }
    }
    if (!j.contains("arms")) throw ConfigError("experiment needs arms");
    for (const auto& ja : j.at("arms")) {
        check_keys(ja, {"name", "norm", "freeze", "detach_calibration"}, "arm");
        ArmSpec a;
        a.name = ja.at("name").get<std::string>();
        a.norm = norm_kind_from_string(ja.at("norm").get<std::string>());
        if (ja.contains("freeze")) a.freeze = ja.at("freeze").get<std::string>();
        if (ja.contains("detach_calibration"))
            a.detach_calibration = ja.at("detach_calibration").get<bool>();
        cfg.arms.push_back(std::move(a));
    }
    if (j.contains("estimate")) {
        const auto& je = j.at("estimate");
        check_keys(je, {"enabled", "arm", "probe_layer"}, "estimate");
        cfg.estimate_enabled = je.value("enabled", false);
        cfg.estimate_arm = je.value("arm", cfg.arms.front().name);
        cfg.probe_layer = je.value("probe_layer", std::string());
    }
    if (j.contains("probes")) {
        const auto& jp = j.at("probes");
        check_keys(jp, {"heatmaps", "deltas"}, "probes");
        cfg.probe_heatmaps = jp.value("heatmaps", false);
        cfg.probe_deltas = jp.value("deltas", false);
    }
    return cfg;
}

json to_json(const ExperimentConfig& cfg) {
    json j;
    j["config_version"] = kConfigVersion;
    j["name"] = cfg.name;
    j["seeds"] = cfg.seeds;
    j["model"] = to_json(cfg.model);
    j["target_task"] = to_json(cfg.target_task);
    j["sources"] = json::array();
    for (const auto& s : cfg.sources) {
        json js;
        js["name"] = s.name;
        if (s.random_init) js["random_init"] = true;
        js["task"] = to_json(s.task);
        j["sources"].push_back(js);
    }
    j["pretrain"] = to_json(cfg.pretrain_cfg);
    j["finetune"] = to_json(cfg.finetune_cfg);
    j["ckpt_variants"] = json::array();
    for (const auto& v : cfg.ckpt_variants) {
        json jv;
        jv["name"] = v.name;
        if (v.shuffle) jv["shuffle_seed"] = v.shuffle_seed;
        if (v.mask) {
            jv["mask_ratio"] = v.mask_ratio;
            jv["mask_seed"] = v.mask_seed;
        }
        j["ckpt_variants"].push_back(jv);
    }
    j["arms"] = json::array();
    for (const auto& a : cfg.arms) {
        json ja;
        ja["name"] = a.name;
        ja["norm"] = to_string(a.norm);
        if (a.freeze) ja["freeze"] = *a.freeze;
        if (a.detach_calibration) ja["detach_calibration"] = *a.detach_calibration;
        j["arms"].push_back(ja);
    }
    json je;
    je["enabled"] = cfg.estimate_enabled;
    je["arm"] = cfg.estimate_arm;
    je["probe_layer"] = cfg.probe_layer;
    j["estimate"] = je;
    json jp;
    jp["heatmaps"] = cfg.probe_heatmaps;
    jp["deltas"] = cfg.probe_deltas;
    j["probes"] = jp;
    return j;
}

Tensor layer_used_calibration(const ModelGraph& model, const std::string& layer_name) {
    const LayerDesc* desc = nullptr;
    for (const auto& d : model.layers)
        if (d.kind == LayerKind::norm && d.name == layer_name) desc = &d;
    if (!desc) throw ConfigError("layer_used_calibration: no norm layer named " + layer_name);
    const NormKind kind = desc->norm_kind;
    if (kind == NormKind::vanilla_bn)
        throw ConfigError("layer_used_calibration: vanilla BN has no calibration matrix");
    if (kind == NormKind::ac_trainable_c) return model.param(layer_name + ".c_opt");

    std::vector<double> z_t, z_s;
    if (kind == NormKind::sc_norm) {
        NormStats tgt = NormStats::fresh(std::size_t(desc->channels), model.norm_config.momentum,
                                         model.norm_config.eps);
        tgt.moving_mean = model.param(layer_name + ".moving_mean").vec();
        tgt.moving_var = model.param(layer_name + ".moving_var").vec();
        z_t = scnorm_signature(tgt, Mode::inference);
        NormStats src = tgt;
        src.moving_mean = model.param(layer_name + ".src_moving_mean").vec();
        src.moving_var = model.param(layer_name + ".src_moving_var").vec();
        z_s = scnorm_signature(src, Mode::inference);
    } else {
        AffineParams tgt, src;
        tgt.gamma = model.param(layer_name + ".gamma").vec();
        tgt.beta = model.param(layer_name + ".beta").vec();
        src.gamma = model.param(layer_name + ".src_gamma").vec();
        src.beta = model.param(layer_name + ".src_beta").vec();
        z_t = domain_signature(tgt, model.norm_config.eps);
        z_s = domain_signature(src, model.norm_config.eps);
    }
    const CalibrationMatrix soft = calibration_matrix(z_t, z_s, model.norm_config.temperature);
    if (kind == NormKind::ac_non_sparse) return soft.values;
    if (kind == NormKind::ac_diag) {
        Tensor d(soft.values.shape());
        for (std::size_t p = 0; p < d.dim(0); ++p) d(p, p) = soft.values(p, p);
        return d;
    }
    return sparsify(soft).values;
}

namespace {

json metrics_to_json(const MetricsRecord& m) {
    json j;
    if (m.dice) j["dice"] = *m.dice;
    if (m.accuracy) j["accuracy"] = *m.accuracy;
    if (m.auc) j["auc"] = *m.auc;
    if (!m.loss_curve.empty()) {
        j["final_loss"] = m.loss_curve.back();
        j["loss_curve"] = m.loss_curve;
    }
    return j;
}

void write_loss_csv(const std::string& path, const std::vector<double>& curve) {
    std::ofstream os(path, std::ios::trunc);
    os << "epoch,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) os << i << "," << fmt6(curve[i]) << "\n";
}

void write_deltas(const fs::path& dir, const Checkpoint& before, const Checkpoint& after) {
    const auto deltas = layer_deltas(before, after);
    std::ofstream os(dir / "deltas.csv", std::ios::trunc);
    os << "layer,type,affine_delta,stats_delta,kernel_delta\n";
    std::vector<std::string> labels;
    std::vector<double> affine, stats, kernel;
    for (const auto& d : deltas) {
        os << d.layer << "," << (d.is_norm ? "norm" : "conv") << ",";
        if (d.is_norm)
            os << fmt6(d.affine_delta) << "," << fmt6(d.stats_delta) << ",\n";
        else
            os << ",," << fmt6(d.kernel_delta) << "\n";
        labels.push_back(d.layer);
        affine.push_back(d.is_norm ? d.affine_delta : 0.0);
        stats.push_back(d.is_norm ? d.stats_delta : 0.0);
        kernel.push_back(d.is_norm ? 0.0 : d.kernel_delta);
    }
    write_bars_svg((dir / "deltas.svg").string(), labels,
                   {{"affine", affine}, {"stats", stats}, {"kernel", kernel}},
                   "per-layer update magnitude");
}

double task_metric(const MetricsRecord& m, const std::string& task) {
    if (task == "segmentation") return m.dice.value_or(0.0);
    return m.accuracy.value_or(0.0);
}

} // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::string& outdir) {
    cfg.model.validate();
    cfg.target_task.validate();
    if (cfg.arms.empty()) throw ConfigError("run_experiment: no arms");
    if (cfg.sources.empty()) throw ConfigError("run_experiment: no sources");

    ExperimentReport report;
    report.outdir = outdir;
    fs::create_directories(outdir);
    fs::create_directories(fs::path(outdir) / "plots");

    write_json_file((fs::path(outdir) / "manifest.json").string(), to_json(cfg));

    json errors = json::array();

    for (const std::uint64_t seed : cfg.seeds) {
        SyntheticTaskSpec target = cfg.target_task;
        target.seed = derive_seed(seed, "task:target");

        std::map<std::string, Checkpoint> source_ckpts;
        std::map<std::string, double> truth_by_source;

        for (const auto& source : cfg.sources) {
            const fs::path src_dir =
                fs::path(outdir) / "runs" / ("seed" + std::to_string(seed)) / source.name;
            fs::create_directories(src_dir);
            try {
                // Every source starts from the same initialization so that
                // checkpoints differ only by what pretraining did to them.
                Checkpoint ckpt;
                const std::uint64_t shared_pre_seed = derive_seed(seed, "pretrain");
                if (source.random_init) {
                    ModelGraph fresh =
                        build_model(cfg.model, derive_seed(shared_pre_seed, "pretrain-init"));
                    ckpt = to_checkpoint(fresh, source.name);
                } else {
                    SyntheticTaskSpec src_task = source.task;
                    src_task.seed = derive_seed(seed, "task:" + source.name);
                    TrainConfig pre = cfg.pretrain_cfg;
                    pre.seed = shared_pre_seed;
                    TrainLog log;
                    ckpt = pretrain(src_task, cfg.model, pre, &log);
                    ckpt.manifest["tag"] = source.name;
                    write_loss_csv((src_dir / "pretrain_loss.csv").string(), log.epoch_loss);
                }
                save_checkpoint(ckpt, (src_dir / "pretrain.acn").string());
                source_ckpts[source.name] = std::move(ckpt);
            } catch (const std::exception& e) {
                json err;
                err["seed"] = seed;
                err["source"] = source.name;
                err["stage"] = "pretrain";
                err["error"] = e.what();
                errors.push_back(err);
                ++report.n_errors;
                continue;
            }

            for (const auto& variant : cfg.ckpt_variants) {
                Checkpoint varied;
                try {
                    varied = source_ckpts.at(source.name);
                    if (variant.shuffle)
                        varied = shuffle_channels(
                            varied, derive_seed(seed, "shuffle:" + std::to_string(variant.shuffle_seed)));
                    if (variant.mask)
                        varied = mask_channels(
                            varied, variant.mask_ratio,
                            derive_seed(seed, "mask:" + std::to_string(variant.mask_seed)));
                } catch (const std::exception& e) {
                    json err;
                    err["seed"] = seed;
                    err["source"] = source.name;
                    err["variant"] = variant.name;
                    err["stage"] = "ckpt_variant";
                    err["error"] = e.what();
                    errors.push_back(err);
                    ++report.n_errors;
                    continue;
                }

                for (const auto& arm : cfg.arms) {
                    ArmResult row;
                    row.seed = seed;
                    row.source = source.name;
                    row.variant = variant.name;
                    row.arm = arm.name;
                    const fs::path run_dir = src_dir / variant.name / arm.name;
                    try {
                        fs::create_directories(run_dir);
                        TrainConfig ft = cfg.finetune_cfg;
                        ft.norm_kind = arm.norm;
                        ft.seed = derive_seed(seed, "ft:" + source.name + ":" + variant.name +
                                                        ":" + arm.name);
                        if (arm.freeze) {
                            if (*arm.freeze == "full_ft")
                                ft.freeze = FreezePolicy::full_ft();
                            else if (*arm.freeze == "norm_only")
                                ft.freeze = FreezePolicy::norm_only();
                            else
                                throw ConfigError("unknown arm freeze policy: " + *arm.freeze);
                        }
                        if (arm.detach_calibration) ft.detach_calibration = *arm.detach_calibration;

                        EpochCallback heatmap_cb;
                        const EpochCallback* cb = nullptr;
                        if (cfg.probe_heatmaps && arm.norm != NormKind::vanilla_bn) {
                            heatmap_cb = [&](int epoch, ModelGraph& m) {
                                for (const auto& d : m.layers) {
                                    if (d.kind != LayerKind::norm) continue;
                                    const Tensor c = layer_used_calibration(m, d.name);
                                    write_heatmap_svg(
                                        (run_dir / ("heatmap_" + d.name + "_epoch" +
                                                    std::to_string(epoch) + ".svg"))
                                            .string(),
                                        c, d.name + " epoch " + std::to_string(epoch));
                                }
                            };
                            cb = &heatmap_cb;
                        }

                        FinetuneResult res = finetune(varied, target, ft, cb);
                        row.metrics = res.metrics;

                        if (arm.norm != NormKind::vanilla_bn) {
                            ModelGraph final_model = model_from_checkpoint(res.final_ckpt);
                            const std::string probe = cfg.probe_layer.empty()
                                                          ? deepest_encoder_norm(final_model)
                                                          : cfg.probe_layer;
                            const Tensor c = layer_used_calibration(final_model, probe);
                            double sum = 0.0;
                            for (std::size_t i = 0; i < c.numel(); ++i) sum += c[i];
                            row.probe_ac_corr = sum;
                        }

                        save_checkpoint(res.final_ckpt, (run_dir / "ckpt_final.acn").string());
                        write_loss_csv((run_dir / "loss.csv").string(), res.log.epoch_loss);
                        write_json_file((run_dir / "metrics.json").string(),
                                        metrics_to_json(res.metrics));
                        json manifest;
                        manifest["config_version"] = kConfigVersion;
                        manifest["target_task"] = to_json(target);
                        manifest["train"] = to_json(ft);
                        manifest["source_ckpt"] = (src_dir / "pretrain.acn").string();
                        manifest["variant"] = variant.name;
                        write_json_file((run_dir / "run_manifest.json").string(), manifest);
                        if (cfg.probe_deltas) write_deltas(run_dir, res.initial_ckpt, res.final_ckpt);

                        if (variant.name == "original" && arm.name == cfg.estimate_arm)
                            truth_by_source[source.name] = task_metric(res.metrics, target.task);
                    } catch (const std::exception& e) {
                        row.failed = true;
                        row.error = e.what();
                        json err;
                        err["seed"] = seed;
                        err["source"] = source.name;
                        err["variant"] = variant.name;
                        err["arm"] = arm.name;
                        err["stage"] = "finetune";
                        err["error"] = e.what();
                        errors.push_back(err);
                        ++report.n_errors;
                    }
                    report.rows.push_back(std::move(row));
                }
            }
        }

        // Transferability stage: score every source on the target and rank
        // against the ground-truth fine-tuning outcome.
        if (cfg.estimate_enabled && source_ckpts.size() >= 2) {
            try {
                SeedRanking ranking;
                ranking.seed = seed;
                std::vector<double> scores, truths;
                std::vector<std::string> names;
                for (const auto& source : cfg.sources) {
                    if (!source_ckpts.count(source.name) || !truth_by_source.count(source.name))
                        continue;
                    TrainConfig est = cfg.finetune_cfg;
                    est.seed = derive_seed(seed, "estimate:" + source.name);
                    const TransferScore s =
                        estimate_transferability(source_ckpts.at(source.name), target, est,
                                                 cfg.probe_layer, source.name);
                    ranking.scores.push_back(s);
                    scores.push_back(s.ac_corr_value);
                    truths.push_back(truth_by_source.at(source.name));
                    names.push_back(source.name);
                }
                if (scores.size() >= 2) {
                    ranking.ground_truth = truths;
                    ranking.report = rank_models(scores, truths);
                    char ann[128];
                    std::snprintf(ann, sizeof(ann), "Rp=%.3f tauK=%.3f tauW=%.3f",
                                  ranking.report.pearson, ranking.report.kendall_tau,
                                  ranking.report.weighted_tau);
                    write_scatter_svg((fs::path(outdir) / "plots" /
                                       ("scatter_seed" + std::to_string(seed) + ".svg"))
                                          .string(),
                                      scores, truths, names, "AC-Corr", "fine-tune metric",
                                      "transferability vs outcome", ann);
                    report.rankings.push_back(std::move(ranking));
                }
            } catch (const std::exception& e) {
                json err;
                err["seed"] = seed;
                err["stage"] = "estimate";
                err["error"] = e.what();
                errors.push_back(err);
                ++report.n_errors;
            }
        }
    }

    // results.csv in deterministic order.
    {
        std::ofstream os(fs::path(outdir) / "results.csv", std::ios::trunc);
        os << "seed,source,ckpt_variant,arm,dice,accuracy,auc,final_loss,ac_corr\n";
        for (const auto& r : report.rows) {
            os << r.seed << "," << r.source << "," << r.variant << "," << r.arm << ","
               << opt_fmt(r.metrics.dice) << "," << opt_fmt(r.metrics.accuracy) << ","
               << opt_fmt(r.metrics.auc) << ","
               << (r.metrics.loss_curve.empty() ? "" : fmt6(r.metrics.loss_curve.back())) << ","
               << opt_fmt(r.probe_ac_corr) << "\n";
        }
    }

    if (!report.rankings.empty()) {
        json jr;
        jr["per_seed"] = json::array();
        std::vector<double> taus;
        for (const auto& r : report.rankings) {
            json js;
            js["seed"] = r.seed;
            js["pearson"] = r.report.pearson;
            js["kendall_tau"] = r.report.kendall_tau;
            js["weighted_tau"] = r.report.weighted_tau;
            js["ties_in_truth"] = r.report.ties_in_truth;
            js["models"] = json::array();
            for (std::size_t i = 0; i < r.scores.size(); ++i) {
                json jm;
                jm["checkpoint_id"] = r.scores[i].checkpoint_id;
                jm["ac_corr"] = r.scores[i].ac_corr_value;
                jm["probe_layer"] = r.scores[i].probe_layer;
                jm["epochs_adapted"] = r.scores[i].epochs_adapted;
                jm["ground_truth"] = r.ground_truth[i];
                js["models"].push_back(jm);
            }
            jr["per_seed"].push_back(js);
            taus.push_back(r.report.kendall_tau);
        }
        std::sort(taus.begin(), taus.end());
        jr["median_kendall_tau"] = taus[taus.size() / 2];
        write_json_file((fs::path(outdir) / "report.json").string(), jr);
    }

    if (!errors.empty()) write_json_file((fs::path(outdir) / "errors.json").string(), errors);
    return report;
}

} // namespace acnorm
